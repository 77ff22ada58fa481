"""Horizon-K lifting and the information quantities of the disclosed data.

Stacking the plant recursion over K steps gives

    x^K = F_K x_1 + J_K t^{K-1} + N_K u^{K-1},
    y~^K = C~ x^K + w^K + v^K,    s^K = D~ x^K,

so (y~^K, s^K) is jointly Gaussian. Every information quantity here is in
nats and every log-determinant goes through a Cholesky factor.

"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from detection_privacy.exceptions import DomainError, HorizonMismatch
from detection_privacy.linalg import (
    check_psd,
    logdet_pd,
    schur_complement,
    symmetrise,
)
from detection_privacy.model_core import SystemModel

logger = logging.getLogger(__name__)

MI_CROSS_CHECK_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class LiftedSystem:
    """Stacked transition matrices and prior state covariance over horizon K."""

    K: int
    F_K: np.ndarray
    J_K: np.ndarray
    N_K: np.ndarray
    C_tilde: np.ndarray
    D_tilde: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True, eq=False)
class JointLaw:
    """Joint Gaussian law of the disclosed measurements and private outputs.

    `Sigma_joint` is ordered (y~^K, s^K).

    """

    mean_y: np.ndarray
    mean_s: np.ndarray
    Sigma_y: np.ndarray
    Sigma_s: np.ndarray
    Sigma_sy: np.ndarray
    Sigma_joint: np.ndarray


def build_lifted(model: SystemModel, K: int) -> LiftedSystem:
    """Stack the plant dynamics over `K` steps.

    Row block i of F_K is A^{i-1}; block (i, j) of J_K is A^{i-j-1} below the
    diagonal and zero elsewhere; N_K = J_K (I_{K-1} kron B).

    """
    if K < 1:
        raise HorizonMismatch(f'horizon must be at least 1, got {K}')

    n_x = model.n_x
    powers = [np.eye(n_x)]
    for _ in range(K - 1):
        powers.append(model.A @ powers[-1])

    F_K = np.vstack(powers)
    J_K = np.zeros((K * n_x, (K - 1) * n_x))
    for row in range(1, K):
        for column in range(row):
            J_K[row * n_x : (row + 1) * n_x, column * n_x : (column + 1) * n_x] = (
                powers[row - column - 1]
            )

    N_K = J_K @ np.kron(np.eye(K - 1), model.B)
    Q = symmetrise(
        F_K @ model.Sigma_x1 @ F_K.T
        + J_K @ np.kron(np.eye(K - 1), model.Sigma_t) @ J_K.T
    )

    return LiftedSystem(
        K=K,
        F_K=F_K,
        J_K=J_K,
        N_K=N_K,
        C_tilde=np.kron(np.eye(K), model.C),
        D_tilde=np.kron(np.eye(K), model.D),
        Q=Q,
    )


def lifted_state_mean(
    lifted: LiftedSystem,
    model: SystemModel,
    inputs: ArrayLike,
) -> np.ndarray:
    """Mean of the stacked state x^K for the known inputs u^{K-1}."""
    inputs = np.asarray(inputs, dtype=float).reshape(-1)
    if inputs.size != (lifted.K - 1) * model.n_u:
        raise HorizonMismatch(
            f'{inputs.size} input values given, horizon {lifted.K} needs '
            f'{(lifted.K - 1) * model.n_u}'
        )
    return lifted.F_K @ model.mu_x1 + lifted.N_K @ inputs


def measurement_covariance(lifted: LiftedSystem, model: SystemModel) -> np.ndarray:
    """Covariance of the undistorted stacked measurements y^K."""
    return symmetrise(
        lifted.C_tilde @ lifted.Q @ lifted.C_tilde.T
        + np.kron(np.eye(lifted.K), model.Sigma_w)
    )


def joint_law(
    lifted: LiftedSystem,
    model: SystemModel,
    inputs: ArrayLike,
    Sigma_v_K: ArrayLike,
) -> JointLaw:
    """Joint Gaussian law of (y~^K, s^K) for a measurement-noise covariance.

    Raises:
        NotPD: The assembled joint covariance fails Cholesky factorization,
            which signals violated model assumptions.

    """
    Sigma_v_K = check_psd(Sigma_v_K, 'Sigma_v_K', lifted.K * model.n_y)
    mean_x = lifted_state_mean(lifted, model, inputs)

    Sigma_y = symmetrise(measurement_covariance(lifted, model) + Sigma_v_K)
    Sigma_s = symmetrise(lifted.D_tilde @ lifted.Q @ lifted.D_tilde.T)
    Sigma_sy = lifted.D_tilde @ lifted.Q @ lifted.C_tilde.T
    Sigma_joint = np.block([[Sigma_y, Sigma_sy.T], [Sigma_sy, Sigma_s]])

    # Factorization raises NotPD for an invalid joint law.
    logdet_pd(Sigma_joint)

    return JointLaw(
        mean_y=lifted.C_tilde @ mean_x,
        mean_s=lifted.D_tilde @ mean_x,
        Sigma_y=Sigma_y,
        Sigma_s=Sigma_s,
        Sigma_sy=Sigma_sy,
        Sigma_joint=symmetrise(Sigma_joint),
    )


def gaussian_entropy(Sigma: ArrayLike) -> float:
    """Differential entropy of N(mu, Sigma) in nats."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    dimension = Sigma.shape[0] if Sigma.size else 0
    return 0.5 * logdet_pd(Sigma) + 0.5 * dimension * (1.0 + math.log(2.0 * math.pi))


def gaussian_mutual_information(
    Sigma_s: ArrayLike,
    Sigma_sy: ArrayLike,
    Sigma_y: ArrayLike,
) -> float:
    """I[s; y] = 1/2 logdet Sigma_s - 1/2 logdet(Sigma_s | y)."""
    conditional = schur_complement(Sigma_s, Sigma_sy, Sigma_y)
    return 0.5 * logdet_pd(Sigma_s) - 0.5 * logdet_pd(conditional)


def mutual_information_from_entropies(law: JointLaw) -> float:
    """I[s; y~] = h[s] + h[y~] - h[s, y~]."""
    return (
        gaussian_entropy(law.Sigma_s)
        + gaussian_entropy(law.Sigma_y)
        - gaussian_entropy(law.Sigma_joint)
    )


def mutual_information(law: JointLaw) -> float:
    """Mutual information between s^K and y~^K in nats.

    The Schur-complement value is returned. It is cross-checked against the
    entropy decomposition and a disagreement above 1e-8 is logged.

    """
    information = gaussian_mutual_information(law.Sigma_s, law.Sigma_sy, law.Sigma_y)
    alternative = mutual_information_from_entropies(law)

    if abs(information - alternative) > MI_CROSS_CHECK_TOLERANCE * max(
        1.0, abs(information)
    ):
        logger.warning(
            'Mutual information cross-check disagrees: %.12g vs %.12g',
            information,
            alternative,
        )

    return max(information, 0.0)


def information_leakage(law: JointLaw, Sigma_j_K: ArrayLike) -> float:
    """Leakage I[s^K; y~^K] - h[j^K] in nats.

    An empty input-noise covariance (K = 1 or n_u = 0) has zero entropy.

    """
    Sigma_j_K = np.asarray(Sigma_j_K, dtype=float)
    input_entropy = gaussian_entropy(Sigma_j_K) if Sigma_j_K.size else 0.0
    return mutual_information(law) - input_entropy


def logconcave_constant(n: int) -> float:
    """c(n) = e^2 n^2 / (4 sqrt(2) (n + 2))."""
    if n < 1:
        raise DomainError(f'dimension must be at least 1, got {n}')
    return math.e**2 * n**2 / (4.0 * math.sqrt(2.0) * (n + 2))


def gaussian_surrogate_gap(n: int) -> float:
    """C_n = (n / 2) ln(2 pi e c(n))."""
    return 0.5 * n * math.log(2.0 * math.pi * math.e * logconcave_constant(n))


def logconcave_bounds(n: int, I_gauss: float) -> tuple[float, float]:
    """Leakage bounds for log-concave noise with matched covariance.

    Args:
        n: Joint dimension K (n_s + n_y).
        I_gauss: Leakage of the Gaussian mechanism with the same covariance.

    Returns:
        The bound I_gauss + C_n and the bound I_gauss + n, for log-concave
        noise with matched covariance and with matched maximum density.

    """
    return I_gauss + gaussian_surrogate_gap(n), I_gauss + float(n)
