"""The chi-squared detector and its false-alarm, detection and ROC metrics.

An alarm is raised at step k when z_k = r_k^T Sigma_r^{-1} r_k exceeds the
threshold alpha = 2 P^{-1}(n_y / 2, 1 - target_far). The detector always
normalises with the nominal Sigma_r, so distorted residuals with covariance
Sigma~ give the quadratic form

    z~ = (m + shift)^T Sigma' (m + shift),
    Sigma' = Sigma~^{1/2} Sigma_r^{-1} Sigma~^{1/2},

with m standard normal and shift = Sigma~^{-1/2} r^delta for a fault mean
r^delta.

"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from detection_privacy.estimation import KalmanDesign, ResidualSequence
from detection_privacy.exceptions import DomainError, NotPD
from detection_privacy.linalg import (
    FAR_BUDGET_TOLERANCE,
    check_psd,
    inv_sqrtm_pd,
    min_eigenvalue,
    solve_pd,
    sqrtm_psd,
    symmetrise,
)
from detection_privacy.model_core import SystemModel
from detection_privacy.special_fn import (
    McEstimate,
    empirical_cdf,
    generalized_chi2_draws,
    inv_reg_lower_gamma,
    noncentral_chi2_cdf,
    ws_gamma_fit,
)

logger = logging.getLogger(__name__)


def threshold_alpha(target_far: float, n_y: int) -> float:
    """Threshold giving false-alarm rate `target_far` for undistorted residuals."""
    if not 0.0 < target_far < 1.0:
        raise DomainError(
            f'target false-alarm rate must lie in (0, 1), got {target_far}'
        )
    return 2.0 * inv_reg_lower_gamma(0.5 * n_y, 1.0 - target_far)


def beta_star(alpha: float, target_far: float, epsilon: float, n_y: int) -> float:
    """Largest residual covariance scaling that keeps the false-alarm budget.

    Returns alpha / (2 P^{-1}(n_y / 2, 1 - target_far - epsilon)), or `inf`
    when target_far + epsilon >= 1 and the detection constraint is dropped.

    """
    if not alpha > 0.0:
        raise DomainError(f'alpha must be positive, got {alpha}')
    if not 0.0 < target_far < 1.0:
        raise DomainError(f'target_far must lie in (0, 1), got {target_far}')
    if epsilon < 0.0:
        raise DomainError(f'epsilon must be non-negative, got {epsilon}')

    if target_far + epsilon >= 1.0 - FAR_BUDGET_TOLERANCE:
        return math.inf
    return alpha / (2.0 * inv_reg_lower_gamma(0.5 * n_y, 1.0 - target_far - epsilon))


@dataclass(frozen=True)
class DetectorConfig:
    """Chi-squared detector tuned for `target_far` with distortion budget `epsilon`.

    `alpha` is derived from `target_far` and `n_y` when not given.

    """

    target_far: float
    epsilon: float
    n_y: int
    alpha: float = field(default=math.nan)

    def __post_init__(self):
        if not 0.0 < self.target_far < 1.0:
            raise DomainError(
                f'target false-alarm rate must lie in (0, 1), got {self.target_far}'
            )
        if self.epsilon < 0.0:
            raise DomainError(f'epsilon must be non-negative, got {self.epsilon}')
        if self.target_far + self.epsilon > 1.0 + FAR_BUDGET_TOLERANCE:
            raise DomainError(
                f'target_far + epsilon must not exceed 1, got '
                f'{self.target_far + self.epsilon}'
            )

        alpha = threshold_alpha(self.target_far, self.n_y)
        if not math.isnan(self.alpha) and abs(self.alpha - alpha) > 1e-10:
            raise DomainError(f'alpha {self.alpha} does not match target_far')
        object.__setattr__(self, 'alpha', alpha)

    @property
    def beta_star(self) -> float:
        return beta_star(self.alpha, self.target_far, self.epsilon, self.n_y)


def run_detector(residuals: ResidualSequence, config: DetectorConfig) -> list[int]:
    """Return the 1-indexed steps of a single run at which an alarm fires."""
    distances = np.asarray(residuals.distances, dtype=float)
    if distances.ndim != 1:
        raise DomainError('run_detector expects a single run; use empirical_alarm_rate')
    return [int(step) + 1 for step in np.flatnonzero(distances > config.alpha)]


def empirical_alarm_rate(distances: ArrayLike, alpha: float) -> McEstimate:
    """Fraction of distances above `alpha`, with binomial standard error."""
    distances = np.asarray(distances, dtype=float).reshape(-1)
    below = empirical_cdf(distances, alpha)
    return McEstimate(
        probability=1.0 - below.probability,
        stderr=below.stderr,
        samples=below.samples,
    )


def _check_pd(matrix: ArrayLike, name: str) -> np.ndarray:
    matrix = check_psd(matrix, name)
    if min_eigenvalue(matrix) <= 0.0:
        raise NotPD(f'{name} is not positive definite')
    return matrix


def normalised_residual_eigenvalues(
    Sigma_tilde: ArrayLike,
    Sigma_r: ArrayLike,
) -> np.ndarray:
    """Eigenvalues of Sigma_r^{-1} Sigma~ from the symmetric similarity."""
    Sigma_tilde = _check_pd(Sigma_tilde, 'Sigma_tilde')
    root = inv_sqrtm_pd(_check_pd(Sigma_r, 'Sigma_r'))
    return np.linalg.eigvalsh(symmetrise(root @ Sigma_tilde @ root))


def false_alarm_rate_analytic(
    Sigma_tilde: ArrayLike,
    Sigma_r: ArrayLike,
    alpha: float,
) -> float:
    """False-alarm rate of distorted residuals from the two-moment gamma fit."""
    fit = ws_gamma_fit(normalised_residual_eigenvalues(Sigma_tilde, Sigma_r))
    return fit.sf(alpha)


def detection_rate_no_privacy(
    fault_residual_mean: ArrayLike,
    Sigma_r: ArrayLike,
    alpha: float,
) -> float:
    """Alarm probability for residuals N(r^delta, Sigma_r)."""
    mean = np.asarray(fault_residual_mean, dtype=float).reshape(-1)
    Sigma_r = _check_pd(Sigma_r, 'Sigma_r')
    noncentrality = float(mean @ solve_pd(Sigma_r, mean))
    return 1.0 - noncentral_chi2_cdf(mean.size, max(noncentrality, 0.0), alpha)


def _quadratic_form(
    fault_residual_mean: ArrayLike,
    Sigma_tilde: ArrayLike,
    Sigma_r: ArrayLike,
) -> tuple[np.ndarray, np.ndarray]:
    """Weight matrix Sigma' and shift of the distorted detector statistic."""
    Sigma_tilde = _check_pd(Sigma_tilde, 'Sigma_tilde')
    Sigma_r = _check_pd(Sigma_r, 'Sigma_r')
    root = sqrtm_psd(Sigma_tilde)
    Sigma_prime = symmetrise(root @ solve_pd(Sigma_r, root))
    shift = inv_sqrtm_pd(Sigma_tilde) @ np.asarray(
        fault_residual_mean, dtype=float
    ).reshape(-1)
    return Sigma_prime, shift


def distorted_statistic_draws(
    fault_residual_mean: ArrayLike,
    Sigma_tilde: ArrayLike,
    Sigma_r: ArrayLike,
    samples: int,
    seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Monte Carlo draws of the detector statistic z~ under distortion."""
    Sigma_prime, shift = _quadratic_form(fault_residual_mean, Sigma_tilde, Sigma_r)
    return generalized_chi2_draws(Sigma_prime, shift, samples, seed, workers=workers)


def detection_rate_with_privacy(
    fault_residual_mean: ArrayLike,
    Sigma_tilde: ArrayLike,
    Sigma_r: ArrayLike,
    alpha: float,
    samples: int,
    seed: int,
    workers: int = 1,
) -> McEstimate:
    """Alarm probability for distorted residuals N(r^delta, Sigma~)."""
    draws = distorted_statistic_draws(
        fault_residual_mean, Sigma_tilde, Sigma_r, samples, seed, workers=workers
    )
    return empirical_alarm_rate(draws, alpha)


@dataclass(frozen=True, eq=False)
class FaultResidualMean:
    """Residual mean caused by a constant fault.

    `transient` holds r_1..r_K of the noise-free residual recursion started
    from an exact initial estimate; `steady_state` is its limit.

    """

    steady_state: np.ndarray
    transient: np.ndarray


def fault_residual_mean(
    model: SystemModel,
    design: KalmanDesign,
    delta: ArrayLike,
    horizon: int = 60,
) -> FaultResidualMean:
    """Mean residual of the steady-state filter under a constant fault delta.

    The estimation error obeys e_{k+1} = (A - L C) e_k + (G - L H) delta with
    e_1 = 0, and r_k = C e_k + H delta.

    """
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (model.n_delta,))
    closed_loop = model.A - design.L @ model.C
    forcing = (model.G - design.L @ model.H) @ delta

    error = np.zeros(model.n_x)
    transient = np.empty((horizon, model.n_y))
    for step in range(horizon):
        transient[step] = model.C @ error + model.H @ delta
        error = closed_loop @ error + forcing

    steady_error = np.linalg.solve(np.eye(model.n_x) - closed_loop, forcing)
    steady_state = model.C @ steady_error + model.H @ delta

    return FaultResidualMean(steady_state=steady_state, transient=transient)


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Detection rate against false-alarm rate over a swept target grid."""

    target_fars: np.ndarray
    alphas: np.ndarray
    false_alarm_rates: np.ndarray
    detection_rates: np.ndarray
    stderr: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.false_alarm_rates, self.detection_rates])

    def _abscissa_weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        order = np.argsort(self.false_alarm_rates, kind='stable')
        x = np.concatenate([[0.0], self.false_alarm_rates[order], [1.0]])
        y = np.concatenate([[0.0], self.detection_rates[order], [1.0]])
        spacing = np.diff(x)
        weights = 0.5 * (spacing[:-1] + spacing[1:])
        return x, y, weights[np.argsort(order)]

    def auc(self) -> float:
        """Trapezoid area with the (0, 0) and (1, 1) end points added."""
        x, y, _ = self._abscissa_weights()
        return float(np.trapezoid(y, x))

    def auc_stderr(self) -> float:
        """Upper bound on the standard error of `auc` from correlated points."""
        _, _, weights = self._abscissa_weights()
        return float(np.sum(weights * self.stderr))


def roc_curve(
    fault_residual_mean: ArrayLike,
    Sigma_tilde: ArrayLike,
    Sigma_r: ArrayLike,
    far_grid: ArrayLike,
    samples: int,
    seed: int,
    workers: int = 1,
    empirical_far: bool = False,
) -> RocCurve:
    """Sweep the detector threshold over a grid of target false-alarm rates.

    A single set of Monte Carlo draws is reused for every threshold, so the
    detection rates along the curve are monotone in the target rate.

    Args:
        fault_residual_mean: Residual mean r^delta caused by the fault.
        Sigma_tilde: Distorted residual covariance.
        Sigma_r: Nominal residual covariance used by the detector.
        far_grid: Strictly increasing target rates in (0, 1).
        samples: Monte Carlo draws for the detection rate.
        seed: Seed of the `mc` stream.
        workers: Threads used to evaluate draw shards.
        empirical_far: Estimate false-alarm rates by Monte Carlo (with the
            fault removed) instead of the gamma fit.

    """
    far_grid = np.asarray(far_grid, dtype=float).reshape(-1)
    if np.any(far_grid <= 0.0) or np.any(far_grid >= 1.0):
        raise DomainError('ROC grid must lie strictly inside (0, 1)')
    if np.any(np.diff(far_grid) <= 0.0):
        raise DomainError('ROC grid must be strictly increasing')

    n_y = np.atleast_2d(Sigma_r).shape[0]
    alphas = np.array([threshold_alpha(target, n_y) for target in far_grid])

    draws = distorted_statistic_draws(
        fault_residual_mean, Sigma_tilde, Sigma_r, samples, seed, workers=workers
    )
    detections = [empirical_alarm_rate(draws, alpha) for alpha in alphas]

    if empirical_far:
        null_draws = distorted_statistic_draws(
            np.zeros(n_y), Sigma_tilde, Sigma_r, samples, seed + 1, workers=workers
        )
        false_alarms = np.array(
            [empirical_alarm_rate(null_draws, alpha).probability for alpha in alphas]
        )
    else:
        false_alarms = np.array(
            [false_alarm_rate_analytic(Sigma_tilde, Sigma_r, alpha) for alpha in alphas]
        )

    return RocCurve(
        target_fars=far_grid,
        alphas=alphas,
        false_alarm_rates=false_alarms,
        detection_rates=np.array([estimate.probability for estimate in detections]),
        stderr=np.array([estimate.stderr for estimate in detections]),
    )
