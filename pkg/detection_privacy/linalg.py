"""Small dense linear-algebra helpers shared by the numerical modules.

All covariance handling goes through these functions so that tolerances are
applied consistently:

* `TOL_PD` - eigenvalue floor for positive (semi)definiteness checks.
* `TOL_RANK` - singular value threshold, relative to the largest singular value.
* `MAX_CONDITION` - condition number above which a covariance is not inverted.
* `FAR_BUDGET_TOLERANCE` - slack on target_far + epsilon <= 1.

"""

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from detection_privacy.exceptions import NotPD, NotPSD, SingularCovariance

TOL_PD = 1e-10
TOL_RANK = 1e-8
MAX_CONDITION = 1e12
FAR_BUDGET_TOLERANCE = 1e-12


def symmetrise(matrix: ArrayLike) -> np.ndarray:
    """Return the symmetric part of a square matrix."""
    matrix = np.asarray(matrix, dtype=float)
    return 0.5 * (matrix + matrix.T)


def min_eigenvalue(matrix: ArrayLike) -> float:
    """Smallest eigenvalue of the symmetric part of `matrix`.

    An empty matrix has no eigenvalues and is reported as `inf`.

    """
    matrix = symmetrise(matrix)
    if matrix.size == 0:
        return float('inf')
    return float(eigh(matrix, eigvals_only=True)[0])


def check_psd(matrix: ArrayLike, name: str, size: int | None = None) -> np.ndarray:
    """Validate a covariance argument and return it as a symmetric float array.

    Args:
        matrix: Candidate covariance matrix.
        name: Argument name used in error messages.
        size: Required number of rows and columns, if known.

    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[0] != matrix.shape[1]:
        raise NotPSD(f'{name} must be square, got shape {matrix.shape}')
    if size is not None and matrix.shape[0] != size:
        raise NotPSD(f'{name} must be {size}x{size}, got {matrix.shape}')
    if not np.allclose(matrix, matrix.T, rtol=1e-8, atol=TOL_PD):
        raise NotPSD(f'{name} is not symmetric')
    smallest = min_eigenvalue(matrix)
    if smallest < -TOL_PD:
        raise NotPSD(f'{name} has eigenvalue {smallest:.3e} < -{TOL_PD}')
    return symmetrise(matrix)


def sqrtm_psd(matrix: ArrayLike) -> np.ndarray:
    """Symmetric square root via eigendecomposition.

    Eigenvalues within rounding of zero (or slightly negative) are clipped, so
    singular covariances such as all-zero blocks are accepted.

    """
    matrix = symmetrise(matrix)
    if matrix.size == 0:
        return matrix
    eigenvalues, eigenvectors = eigh(matrix)
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return symmetrise((eigenvectors * root) @ eigenvectors.T)


def inv_sqrtm_pd(matrix: ArrayLike) -> np.ndarray:
    """Symmetric inverse square root of a positive definite matrix."""
    matrix = symmetrise(matrix)
    eigenvalues, eigenvectors = eigh(matrix)
    if eigenvalues[0] <= 0.0:
        raise NotPD(f'matrix has non-positive eigenvalue {eigenvalues[0]:.3e}')
    return symmetrise((eigenvectors / np.sqrt(eigenvalues)) @ eigenvectors.T)


def logdet_pd(matrix: ArrayLike) -> float:
    """Log-determinant through a Cholesky factor; empty matrices give 0."""
    matrix = symmetrise(matrix)
    if matrix.size == 0:
        return 0.0
    try:
        factor, _ = cho_factor(matrix, lower=True)
    except LinAlgError as error:
        raise NotPD('matrix is not positive definite') from error
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def condition_number(matrix: ArrayLike) -> float:
    """Ratio of the extreme eigenvalues of a symmetric matrix."""
    eigenvalues = eigh(symmetrise(matrix), eigvals_only=True)
    if eigenvalues[0] <= 0.0:
        return float('inf')
    return float(eigenvalues[-1] / eigenvalues[0])


def solve_pd(
    matrix: ArrayLike,
    rhs: ArrayLike,
    max_condition: float = MAX_CONDITION,
) -> np.ndarray:
    """Solve `matrix @ X = rhs` for a symmetric positive definite `matrix`.

    Raises:
        SingularCovariance: the condition number exceeds `max_condition` or
            the Cholesky factorization fails.

    """
    matrix = symmetrise(matrix)
    if condition_number(matrix) > max_condition:
        raise SingularCovariance(
            f'condition number exceeds {max_condition:.0e}; refusing to invert'
        )
    try:
        factor = cho_factor(matrix, lower=True)
    except LinAlgError as error:
        raise SingularCovariance('covariance failed Cholesky factorization') from error
    return cho_solve(factor, np.asarray(rhs, dtype=float))


def schur_complement(
    block_11: ArrayLike,
    block_12: ArrayLike,
    block_22: ArrayLike,
) -> np.ndarray:
    """Return `block_11 - block_12 block_22^{-1} block_12^T`."""
    block_12 = np.asarray(block_12, dtype=float)
    correction = block_12 @ solve_pd(block_22, block_12.T)
    return symmetrise(np.asarray(block_11, dtype=float) - correction)
