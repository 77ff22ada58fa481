"""Exceptions raised by detection-privacy.

Input validation errors derive from `ValueError` and numerical failures from
`ArithmeticError` or `RuntimeError`, so callers can catch either the specific
class or the built-in family.

"""


class DetectionPrivacyError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DetectionPrivacyError, ValueError):
    """A configuration file or command-line option is invalid."""


class DimensionMismatch(DetectionPrivacyError, ValueError):
    """Matrix or vector shapes are mutually inconsistent."""


class HorizonMismatch(DetectionPrivacyError, ValueError):
    """Sequence lengths disagree with the simulation horizon."""


class DomainError(DetectionPrivacyError, ValueError):
    """A scalar argument lies outside the domain of a function."""


class AllZero(DetectionPrivacyError, ValueError):
    """Every eigenvalue handed to a moment fit is zero."""


class NotPSD(DetectionPrivacyError, ValueError):
    """A matrix expected to be positive semidefinite is not."""


class NotPD(DetectionPrivacyError, ArithmeticError):
    """A matrix expected to be positive definite failed factorization."""


class SingularCovariance(DetectionPrivacyError, ArithmeticError):
    """A covariance matrix is too badly conditioned to invert."""


class NoConvergence(DetectionPrivacyError, RuntimeError):
    """The Riccati fixed-point iteration did not converge."""


class InfeasibleConfig(DetectionPrivacyError, ValueError):
    """The requested synthesis problem has no strictly feasible point."""


class UnsupportedHorizon(DetectionPrivacyError, ValueError):
    """The horizon is too long for the requested variable structure."""


class NotConverged(DetectionPrivacyError, RuntimeError):
    """The barrier method exhausted its iteration budget."""


class LineSearchStall(DetectionPrivacyError, RuntimeError):
    """Backtracking could not find an acceptable Newton step."""
