"""Steady-state Kalman filtering, residual generation and the MMSE adversary.

The remote operator runs the steady-state filter

    x^_{k+1} = A x^_k + B u_k + L (y_k - C x^_k),    r_k = y_k - C x^_k,

whose gain comes from the fixed point P of the Riccati recursion

    P = A P A^T + Sigma_t - A P C^T (Sigma_w + C P C^T)^{-1} C P A^T.

The detector distance of each residual is z_k = r_k^T Sigma_r^{-1} r_k with
the nominal residual covariance Sigma_r = C P C^T + Sigma_w, also when the
filter is fed distorted data.

"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from detection_privacy.exceptions import (
    DimensionMismatch,
    NoConvergence,
    SingularCovariance,
)
from detection_privacy.linalg import check_psd, schur_complement, solve_pd, symmetrise
from detection_privacy.model_core import SystemModel, check_dimensions
from detection_privacy.serialise import serialise_value, write_json_file

logger = logging.getLogger(__name__)

DARE_TOLERANCE = 1e-12
DARE_MAX_ITERATIONS = 100_000


@dataclass(frozen=True, eq=False)
class KalmanDesign:
    """Asymptotic error covariance, filter gain and residual covariance."""

    P: np.ndarray
    L: np.ndarray
    Sigma_r: np.ndarray
    iterations: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            'P': serialise_value(self.P),
            'L': serialise_value(self.L),
            'Sigma_r': serialise_value(self.Sigma_r),
            'iterations': self.iterations,
        }


@dataclass(frozen=True, eq=False)
class ResidualSequence:
    """Residuals r_k and their chi-squared distances z_k over a horizon."""

    residuals: np.ndarray
    distances: np.ndarray

    @property
    def horizon(self) -> int:
        return self.residuals.shape[-2]


@dataclass(frozen=True, eq=False)
class MmseEstimate:
    """Linear MMSE estimate of the stacked private output."""

    s_hat: np.ndarray
    error_cov: np.ndarray

    @property
    def mse(self) -> float:
        return float(np.trace(self.error_cov))


def _riccati_map(model: SystemModel, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One Riccati step, returning the next iterate and the gain at `P`."""
    innovation = model.Sigma_w + model.C @ P @ model.C.T
    gain = solve_pd(innovation, model.C @ P @ model.A.T).T
    next_P = (
        model.A @ P @ model.A.T
        + model.Sigma_t
        - gain @ model.C @ P @ model.A.T
    )
    return symmetrise(next_P), gain


def riccati_residual(model: SystemModel, P: ArrayLike) -> np.ndarray:
    """Difference between `P` and its image under the Riccati recursion."""
    P = np.asarray(P, dtype=float)
    next_P, _ = _riccati_map(model, P)
    return next_P - P


def solve_dare(
    model: SystemModel,
    tolerance: float = DARE_TOLERANCE,
    max_iterations: int = DARE_MAX_ITERATIONS,
) -> KalmanDesign:
    """Solve the filtering Riccati equation by fixed-point iteration.

    Iteration starts from Sigma_t and stops once successive iterates differ by
    less than `tolerance` in relative Frobenius norm.

    Args:
        model: Plant with (A, C) detectable.
        tolerance: Relative Frobenius stopping tolerance.
        max_iterations: Iteration budget before `NoConvergence` is raised.

    Raises:
        NoConvergence: The budget is exhausted, or an innovation covariance
            C P C^T + Sigma_w cannot be inverted along the way.

    """
    check_dimensions(model)
    P = symmetrise(model.Sigma_t)

    try:
        for iteration in range(1, max_iterations + 1):
            next_P, _ = _riccati_map(model, P)
            change = np.linalg.norm(next_P - P)
            P = next_P
            if change <= tolerance * max(np.linalg.norm(P), np.finfo(float).tiny):
                break
        else:
            raise NoConvergence(
                f'Riccati iteration did not converge in {max_iterations} iterations'
            )

        innovation = symmetrise(model.C @ P @ model.C.T + model.Sigma_w)
        L = solve_pd(innovation, model.C @ P @ model.A.T).T
    except SingularCovariance as error:
        raise NoConvergence(
            f'Riccati iteration hit a singular innovation covariance: {error}'
        ) from error

    logger.debug('Riccati iteration converged after %d iterations', iteration)

    return KalmanDesign(P=P, L=L, Sigma_r=innovation, iterations=iteration)


def save_kalman_design(design: KalmanDesign, design_path: str | Path):
    """Write P, L and Sigma_r as a JSON document."""
    write_json_file(design_path, design.to_dict())


def run_remote_filter(
    model: SystemModel,
    design: KalmanDesign,
    measurements: ArrayLike,
    inputs: ArrayLike,
) -> ResidualSequence:
    """Run the steady-state filter on (possibly distorted) disclosed data.

    Leading axes of `measurements` and `inputs` are treated as independent
    runs and broadcast against each other.

    Args:
        model: Plant model known to the operator.
        design: Steady-state filter, typically from `solve_dare`.
        measurements: y_1..y_K with shape (..., K, n_y).
        inputs: u_1..u_{K-1} with shape (..., K-1, n_u).

    """
    measurements = np.asarray(measurements, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    horizon = measurements.shape[-2]

    if measurements.shape[-1] != model.n_y:
        raise DimensionMismatch(
            f'measurements have {measurements.shape[-1]} channels, '
            f'model has n_y={model.n_y}'
        )
    if inputs.size == 0:
        inputs = np.zeros((max(horizon - 1, 0), model.n_u))
    if inputs.shape[-2:] != (horizon - 1, model.n_u):
        raise DimensionMismatch(
            f'inputs have shape {inputs.shape}, expected (..., {horizon - 1}, '
            f'{model.n_u})'
        )

    batch = np.broadcast_shapes(measurements.shape[:-2], inputs.shape[:-2])
    residuals = np.empty(batch + (horizon, model.n_y))
    estimate = np.broadcast_to(model.mu_x1, batch + (model.n_x,))

    for step in range(horizon):
        residuals[..., step, :] = measurements[..., step, :] - estimate @ model.C.T
        if step < horizon - 1:
            estimate = (
                estimate @ model.A.T
                + inputs[..., step, :] @ model.B.T
                + residuals[..., step, :] @ design.L.T
            )

    precision = solve_pd(design.Sigma_r, np.eye(model.n_y))
    distances = np.einsum('...i,ij,...j->...', residuals, precision, residuals)

    return ResidualSequence(residuals=residuals, distances=np.maximum(distances, 0.0))


def distorted_residual_cov(
    design: KalmanDesign,
    model: SystemModel,
    Sigma_v_k: ArrayLike,
    Sigma_j_k: ArrayLike,
) -> np.ndarray:
    """Steady-state covariance of the residual computed from distorted data.

    Returns Sigma_r + Sigma_v + C L Sigma_v L^T C^T + C B Sigma_j B^T C^T.

    """
    Sigma_v_k = check_psd(Sigma_v_k, 'Sigma_v_k', model.n_y)
    Sigma_j_k = check_psd(Sigma_j_k, 'Sigma_j_k', model.n_u)
    CL = model.C @ design.L
    CB = model.C @ model.B
    return symmetrise(
        design.Sigma_r + Sigma_v_k + CL @ Sigma_v_k @ CL.T + CB @ Sigma_j_k @ CB.T
    )


def mmse_estimate(
    mean_s: ArrayLike,
    mean_y: ArrayLike,
    Sigma_s: ArrayLike,
    Sigma_sy: ArrayLike,
    Sigma_y: ArrayLike,
    observed_y: ArrayLike,
) -> MmseEstimate:
    """Condition the private output on the disclosed measurements.

    `observed_y` may carry leading run axes; `s_hat` then has the same
    leading axes. The error covariance does not depend on the observation.

    """
    mean_s = np.asarray(mean_s, dtype=float)
    mean_y = np.asarray(mean_y, dtype=float)
    Sigma_sy = np.atleast_2d(np.asarray(Sigma_sy, dtype=float))
    observed_y = np.asarray(observed_y, dtype=float)

    gain = solve_pd(Sigma_y, Sigma_sy.T).T
    s_hat = mean_s + (observed_y - mean_y) @ gain.T
    error_cov = schur_complement(Sigma_s, Sigma_sy, Sigma_y)

    return MmseEstimate(s_hat=s_hat, error_cov=error_cov)
