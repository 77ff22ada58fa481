"""Incomplete gamma functions and chi-squared type distributions.

The regularized lower incomplete gamma function P(a, x) is evaluated with the
power series for x < a + 1 and with the Lentz continued fraction for the
upper function otherwise, both capped at `MAX_TERMS` terms. Its inverse uses
Newton steps safeguarded by a bisection bracket.

Quadratic forms of Gaussian vectors are handled two ways: the two-moment
gamma fit of a weighted sum of chi-squared variables (`ws_gamma_fit`), and
Monte Carlo sampling with a binomial standard error
(`generalized_chi2_cdf_mc`).

"""

import logging
import math
import sys
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import gammaln

from detection_privacy.exceptions import AllZero, DomainError
from detection_privacy.linalg import TOL_PD, check_psd
from detection_privacy.streams import map_shards

logger = logging.getLogger(__name__)

MAX_TERMS = 300
SERIES_ACCURACY = 1.0e-16
INVERSE_TOLERANCE = 1.0e-12
POISSON_TAIL = 1.0e-12
MIN_MC_SAMPLES = 10_000

_TINY = sys.float_info.min / sys.float_info.epsilon


def _log_prefactor(a: float, x: float) -> float:
    """Logarithm of x^a e^{-x} / Gamma(a)."""
    return a * math.log(x) - x - float(gammaln(a))


def _lower_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    denominator = a
    for _ in range(MAX_TERMS):
        denominator += 1.0
        term *= x / denominator
        total += term
        if abs(term) < abs(total) * SERIES_ACCURACY:
            break
    else:
        logger.warning(
            'Incomplete gamma series hit %d terms at a=%g, x=%g', MAX_TERMS, a, x
        )
    return total * math.exp(_log_prefactor(a, x))


def _upper_continued_fraction(a: float, x: float) -> float:
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for index in range(1, MAX_TERMS + 1):
        an = -index * (index - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < SERIES_ACCURACY:
            break
    else:
        logger.warning(
            'Incomplete gamma continued fraction hit %d terms at a=%g, x=%g',
            MAX_TERMS,
            a,
            x,
        )
    return math.exp(_log_prefactor(a, x)) * h


def reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x).

    Args:
        a: Shape, strictly positive.
        x: Upper integration limit, non-negative (`inf` gives 1).

    """
    a = float(a)
    x = float(x)

    if not a > 0.0:
        raise DomainError(f'reg_lower_gamma needs a > 0, got a={a}')
    if not x >= 0.0:
        raise DomainError(f'reg_lower_gamma needs x >= 0, got x={x}')

    if x == 0.0:
        value = 0.0
    elif math.isinf(x):
        value = 1.0
    elif x < a + 1.0:
        value = _lower_series(a, x)
    else:
        value = 1.0 - _upper_continued_fraction(a, x)

    return min(max(value, 0.0), 1.0)


def inv_reg_lower_gamma(a: float, p: float) -> float:
    """Return x such that P(a, x) = p.

    Newton iterations on P(a, x) - p are kept inside a bracket that is
    bisected whenever a Newton step leaves it.

    Args:
        a: Shape, strictly positive.
        p: Probability in [0, 1). The p -> 1 limit is infinite and is not
            represented.

    """
    a = float(a)
    p = float(p)

    if not a > 0.0:
        raise DomainError(f'inv_reg_lower_gamma needs a > 0, got a={a}')
    if not 0.0 <= p < 1.0:
        raise DomainError(f'inv_reg_lower_gamma needs 0 <= p < 1, got p={p}')
    if p == 0.0:
        return 0.0

    lower, upper = 0.0, max(a, 1.0)
    while reg_lower_gamma(a, upper) < p:
        lower, upper = upper, 2.0 * upper

    # Leading series term P(a, x) ~ x^a / Gamma(a + 1) starts below the root.
    guess = a
    if a < 1.0:
        guess = math.exp((math.log(p) + float(gammaln(a + 1.0))) / a)
    x = min(max(guess, lower), upper)
    for _ in range(200):
        error = reg_lower_gamma(a, x) - p
        if abs(error) <= INVERSE_TOLERANCE:
            break

        if error > 0.0:
            upper = x
        else:
            lower = x

        density = math.exp(_log_prefactor(a, x) - math.log(x)) if x > 0.0 else 0.0
        candidate = x - error / density if density > 0.0 else math.nan

        if not lower < candidate < upper:
            candidate = 0.5 * (lower + upper)
        if candidate == x or upper - lower <= 1e-15 * upper:
            break
        x = candidate

    return x


def chi2_cdf(x: float, dof: float) -> float:
    """Central chi-squared CDF with `dof` degrees of freedom."""
    if x <= 0.0:
        return 0.0
    return reg_lower_gamma(0.5 * dof, 0.5 * x)


def noncentral_chi2_cdf(dof: int, noncentrality: float, x: float) -> float:
    """Non-central chi-squared CDF as a Poisson mixture of central CDFs.

    Terms are summed upwards from j = 0 until the neglected Poisson tail
    drops below `POISSON_TAIL`.

    """
    if noncentrality < 0.0:
        raise DomainError(f'non-centrality must be >= 0, got {noncentrality}')
    if x <= 0.0:
        return 0.0
    if noncentrality == 0.0:
        return chi2_cdf(x, dof)

    mean = 0.5 * noncentrality
    last_term = int(mean + 40.0 * math.sqrt(mean) + 100.0)
    total = 0.0
    weight_sum = 0.0

    for index in range(last_term + 1):
        log_weight = index * math.log(mean) - mean - float(gammaln(index + 1.0))
        weight = math.exp(log_weight)
        weight_sum += weight
        if weight > 0.0:
            total += weight * chi2_cdf(x, dof + 2 * index)
        if index > mean and 1.0 - weight_sum < POISSON_TAIL:
            break

    return min(max(total, 0.0), 1.0)


@dataclass(frozen=True)
class GammaFit:
    """Gamma distribution with `shape` K and `scale` theta."""

    shape: float
    scale: float

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def variance(self) -> float:
        return self.shape * self.scale**2

    def cdf(self, x: float) -> float:
        if x <= 0.0:
            return 0.0
        return reg_lower_gamma(self.shape, x / self.scale)

    def sf(self, x: float) -> float:
        return 1.0 - self.cdf(x)


def ws_gamma_fit(eigenvalues: ArrayLike) -> GammaFit:
    """Two-moment gamma fit of sum_i lambda_i chi2_1.

    Shape (sum lambda)^2 / (2 sum lambda^2) and scale
    2 sum lambda^2 / sum lambda match the mean and variance exactly.

    """
    eigenvalues = np.asarray(eigenvalues, dtype=float).reshape(-1)

    if eigenvalues.size and eigenvalues.min() < -TOL_PD:
        raise DomainError(
            f'eigenvalues must be non-negative, got {eigenvalues.min()}'
        )

    eigenvalues = np.clip(eigenvalues, 0.0, None)
    first_moment = float(eigenvalues.sum())
    second_moment = float(np.sum(eigenvalues**2))

    if first_moment == 0.0:
        raise AllZero('Cannot fit a gamma distribution to all-zero eigenvalues')

    return GammaFit(
        shape=first_moment**2 / (2.0 * second_moment),
        scale=2.0 * second_moment / first_moment,
    )


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo probability with its binomial standard error."""

    probability: float
    stderr: float
    samples: int


def generalized_chi2_draws(
    Sigma_prime: ArrayLike,
    noncentral_shift: ArrayLike,
    samples: int,
    seed: int,
    workers: int = 1,
    stream_name: str = 'mc',
    substream: tuple[int, ...] = (),
) -> np.ndarray:
    """Draw (m + shift)^T Sigma' (m + shift) for standard normal m."""
    Sigma_prime = check_psd(Sigma_prime, 'Sigma_prime')
    shift = np.asarray(noncentral_shift, dtype=float).reshape(-1)
    dimension = Sigma_prime.shape[0]

    if samples < MIN_MC_SAMPLES:
        logger.warning(
            'Monte Carlo estimate uses %d samples, fewer than %d',
            samples,
            MIN_MC_SAMPLES,
        )

    def quadratic_form(generator: np.random.Generator, size: int) -> np.ndarray:
        shifted = generator.standard_normal((size, dimension)) + shift
        return np.einsum('ni,ij,nj->n', shifted, Sigma_prime, shifted)

    return map_shards(
        quadratic_form,
        samples,
        seed,
        name=stream_name,
        workers=workers,
        substream=substream,
    )


def empirical_cdf(draws: np.ndarray, x: float) -> McEstimate:
    """Fraction of `draws` at or below `x` with its standard error."""
    probability = float(np.mean(draws <= x))
    stderr = math.sqrt(probability * (1.0 - probability) / draws.size)
    return McEstimate(probability=probability, stderr=stderr, samples=draws.size)


def generalized_chi2_cdf_mc(
    Sigma_prime: ArrayLike,
    noncentral_shift: ArrayLike,
    x: float,
    samples: int,
    seed: int,
    workers: int = 1,
) -> McEstimate:
    """Monte Carlo CDF of a shifted Gaussian quadratic form at `x`.

    Args:
        Sigma_prime: Weight matrix of the quadratic form, PSD.
        noncentral_shift: Mean of the standard normal vector being weighted.
        x: Point at which the CDF is evaluated.
        samples: Number of draws, at least 10^4 for the stated accuracy.
        seed: Seed of the `mc` stream.
        workers: Threads used to evaluate draw shards.

    """
    draws = generalized_chi2_draws(
        Sigma_prime, noncentral_shift, samples, seed, workers=workers
    )
    return empirical_cdf(draws, x)
