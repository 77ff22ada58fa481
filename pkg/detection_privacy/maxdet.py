"""Log-determinant barrier method for small determinant-maximization programs.

Programs are posed over symmetric matrix variables X_1, X_2, ... and consist
of linear matrix inequalities

    F(x) = F_0 + sum_i sign_i T_i X_{v(i)} T_i^T  >  0,

one barrier -logdet F(x) per inequality. The objective is itself a sum of
-logdet terms of the same form. A symmetric variable is vectorised over its
upper-triangular entries (only the in-block entries for block-diagonal
variables), with basis matrices c_p (e_a e_b^T + e_b e_a^T), c_p = 1/2 on the
diagonal and 1 elsewhere, so each coordinate equals the matrix entry X[a, b].

For G = F^{-1} and M = T_i^T G T_j the derivatives of -logdet F are

    d/dx_p       = -2 sign_i c_p (T_i^T G T_i)[a, b]
    d2/dx_p dx_q = 2 sign_i sign_j c_p c_q (M[a, c] M[b, d] + M[a, d] M[b, c])

for coordinates p = (a, b) of term i and q = (c, d) of term j.

"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from detection_privacy.exceptions import InfeasibleConfig, LineSearchStall, NotConverged

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SymmetricVariable:
    """A symmetric matrix variable occupying a slice of the flat vector."""

    name: str
    size: int
    rows: np.ndarray
    cols: np.ndarray
    offset: int = 0

    @classmethod
    def full(cls, name: str, size: int, offset: int = 0) -> 'SymmetricVariable':
        rows, cols = np.triu_indices(size)
        return cls(name, size, rows, cols, offset)

    @classmethod
    def block_diagonal(
        cls,
        name: str,
        size: int,
        block: int,
        offset: int = 0,
    ) -> 'SymmetricVariable':
        local_rows, local_cols = np.triu_indices(block)
        starts = np.arange(0, size, block)
        rows = (starts[:, np.newaxis] + local_rows).reshape(-1)
        cols = (starts[:, np.newaxis] + local_cols).reshape(-1)
        return cls(name, size, rows, cols, offset)

    @property
    def count(self) -> int:
        return self.rows.size

    @property
    def coefficients(self) -> np.ndarray:
        return np.where(self.rows == self.cols, 0.5, 1.0)

    @property
    def indices(self) -> slice:
        return slice(self.offset, self.offset + self.count)

    def to_matrix(self, x: np.ndarray) -> np.ndarray:
        matrix = np.zeros((self.size, self.size))
        values = x[self.indices]
        matrix[self.rows, self.cols] = values
        matrix[self.cols, self.rows] = values
        return matrix

    def from_matrix(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix, dtype=float)[self.rows, self.cols]


@dataclass(frozen=True, eq=False)
class Congruence:
    """The term sign * T X T^T of a linear matrix inequality.

    Only variable coordinates whose rows and columns both meet a non-zero
    column of T contribute; they are cached in `active`.

    """

    variable: SymmetricVariable
    transform: np.ndarray
    sign: float = 1.0
    active: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        touched = np.any(self.transform != 0.0, axis=0)
        active = np.flatnonzero(
            touched[self.variable.rows] & touched[self.variable.cols]
        )
        object.__setattr__(self, 'active', active)

    @property
    def global_indices(self) -> np.ndarray:
        return self.variable.offset + self.active

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        matrix = self.variable.to_matrix(x)
        return self.sign * (self.transform @ matrix @ self.transform.T)


@dataclass(frozen=True, eq=False)
class LinearMatrixInequality:
    """F_0 + sum of congruence terms, required to be positive definite."""

    name: str
    constant: np.ndarray
    terms: tuple[Congruence, ...]

    @property
    def dimension(self) -> int:
        return self.constant.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        value = np.array(self.constant, dtype=float, copy=True)
        for term in self.terms:
            value += term.evaluate(x)
        return 0.5 * (value + value.T)

    def barrier(self, x: np.ndarray) -> float:
        """-logdet F(x), or `inf` outside the domain."""
        try:
            factor, _ = cho_factor(self.evaluate(x), lower=True)
        except LinAlgError:
            return np.inf
        return float(-2.0 * np.sum(np.log(np.diag(factor))))

    def min_eigenvalue(self, x: np.ndarray) -> float:
        return float(np.linalg.eigvalsh(self.evaluate(x))[0])

    def accumulate(
        self,
        x: np.ndarray,
        weight: float,
        gradient: np.ndarray,
        hessian: np.ndarray,
    ) -> float:
        """Add `weight` times the barrier derivatives; return the barrier."""
        factor = cho_factor(self.evaluate(x), lower=True)
        inverse = cho_solve(factor, np.eye(self.dimension))
        value = float(-2.0 * np.sum(np.log(np.diag(factor[0]))))

        projected = [inverse @ term.transform for term in self.terms]

        for first, term_i in enumerate(self.terms):
            rows_i = term_i.variable.rows[term_i.active]
            cols_i = term_i.variable.cols[term_i.active]
            coef_i = term_i.variable.coefficients[term_i.active]
            indices_i = term_i.global_indices

            local = term_i.transform.T @ projected[first]
            gradient[indices_i] -= (
                2.0 * weight * term_i.sign * coef_i * local[rows_i, cols_i]
            )

            for second in range(first, len(self.terms)):
                term_j = self.terms[second]
                rows_j = term_j.variable.rows[term_j.active]
                cols_j = term_j.variable.cols[term_j.active]
                coef_j = term_j.variable.coefficients[term_j.active]
                indices_j = term_j.global_indices

                mixed = term_i.transform.T @ projected[second]
                block = (
                    mixed[np.ix_(rows_i, rows_j)] * mixed[np.ix_(cols_i, cols_j)]
                    + mixed[np.ix_(rows_i, cols_j)] * mixed[np.ix_(cols_i, rows_j)]
                )
                block *= (
                    2.0
                    * weight
                    * term_i.sign
                    * term_j.sign
                    * np.outer(coef_i, coef_j)
                )

                hessian[np.ix_(indices_i, indices_j)] += block
                if second != first:
                    hessian[np.ix_(indices_j, indices_i)] += block.T

        return value


@dataclass(frozen=True)
class BarrierOptions:
    """Stopping rules and line-search constants of the barrier method."""

    gap_tol: float = 1e-7
    t0: float = 1.0
    mu: float = 10.0
    max_outer: int = 50
    max_inner: int = 200
    armijo: float = 0.3
    backtrack: float = 0.5
    newton_tol: float = 1e-9


@dataclass(frozen=True, eq=False)
class BarrierResult:
    """Final iterate and iteration history of `minimize`."""

    x: np.ndarray
    objective: float
    outer_iterations: int
    newton_iterations: int
    stage_objectives: tuple[float, ...]
    barrier_parameter: float


@dataclass(frozen=True, eq=False)
class MaxdetProgram:
    """Minimise a sum of -logdet terms subject to strict LMIs."""

    size: int
    objective: tuple[LinearMatrixInequality, ...]
    constraints: tuple[LinearMatrixInequality, ...]

    @property
    def barrier_count(self) -> int:
        return sum(constraint.dimension for constraint in self.constraints)

    def objective_value(self, x: np.ndarray) -> float:
        return sum(term.barrier(x) for term in self.objective)

    def centering_value(self, x: np.ndarray, t: float) -> float:
        value = t * self.objective_value(x)
        for constraint in self.constraints:
            if not np.isfinite(value):
                break
            value += constraint.barrier(x)
        return value

    def newton_system(
        self,
        x: np.ndarray,
        t: float,
    ) -> tuple[float, np.ndarray, np.ndarray]:
        gradient = np.zeros(self.size)
        hessian = np.zeros((self.size, self.size))
        value = 0.0
        for term in self.objective:
            value += t * term.accumulate(x, t, gradient, hessian)
        for constraint in self.constraints:
            value += constraint.accumulate(x, 1.0, gradient, hessian)
        return value, gradient, 0.5 * (hessian + hessian.T)

    def violated(self, x: np.ndarray) -> list[str]:
        """Names of objective or constraint terms not strictly satisfied at x."""
        return [
            term.name
            for term in self.objective + self.constraints
            if not np.isfinite(term.barrier(x))
        ]


def _newton_step(gradient: np.ndarray, hessian: np.ndarray) -> np.ndarray:
    try:
        factor = cho_factor(hessian, lower=True)
    except LinAlgError:
        ridge = 1e-10 * max(np.trace(hessian) / max(hessian.shape[0], 1), 1.0)
        logger.debug('Newton system not positive definite, adding ridge %.3e', ridge)
        factor = cho_factor(hessian + ridge * np.eye(hessian.shape[0]), lower=True)
    return -cho_solve(factor, gradient)


def _centre(
    program: MaxdetProgram,
    x: np.ndarray,
    t: float,
    options: BarrierOptions,
) -> tuple[np.ndarray, int]:
    """Damped Newton minimisation of t f_0 + barrier, started inside the domain."""
    for iteration in range(1, options.max_inner + 1):
        value, gradient, hessian = program.newton_system(x, t)
        step = _newton_step(gradient, hessian)
        decrement = float(-gradient @ step)

        if 0.5 * decrement <= options.newton_tol:
            return x, iteration

        slope = float(gradient @ step)
        slack = 1e-13 * (abs(value) + 1.0)
        length = 1.0
        while True:
            candidate = x + length * step
            candidate_value = program.centering_value(candidate, t)
            if candidate_value <= value + options.armijo * length * slope + slack:
                break
            length *= options.backtrack
            if length < 1e-14:
                if 0.5 * decrement <= 1e3 * options.newton_tol:
                    return x, iteration
                raise LineSearchStall(
                    f'line search stalled at t={t:.3e} with Newton decrement '
                    f'{decrement:.3e}'
                )
        x = candidate

    raise NotConverged(
        f'centering did not converge in {options.max_inner} Newton iterations'
    )


def minimize(
    program: MaxdetProgram,
    x0: np.ndarray,
    options: BarrierOptions = BarrierOptions(),
) -> BarrierResult:
    """Barrier method from a strictly feasible starting point.

    The barrier parameter t starts at `options.t0` and grows by `options.mu`
    after each centering stage until barrier_count / t < `options.gap_tol`.

    Raises:
        InfeasibleConfig: x0 is not strictly inside every LMI.
        NotConverged: The outer or inner iteration budget is exhausted.
        LineSearchStall: Backtracking failed far from a centre.

    """
    x = np.asarray(x0, dtype=float).copy()
    violated = program.violated(x)
    if violated:
        raise InfeasibleConfig(f'starting point violates {violated}')

    t = options.t0
    newton_iterations = 0
    stage_objectives: list[float] = []

    for outer in range(1, options.max_outer + 1):
        x, inner = _centre(program, x, t, options)
        newton_iterations += inner
        stage_objectives.append(program.objective_value(x))
        logger.debug(
            'Barrier stage %d: t=%.3e, objective=%.10g, Newton iterations=%d',
            outer,
            t,
            stage_objectives[-1],
            inner,
        )

        if program.barrier_count / t < options.gap_tol:
            break
        t *= options.mu
    else:
        raise NotConverged(
            f'barrier method did not reach gap {options.gap_tol:.1e} in '
            f'{options.max_outer} stages'
        )

    return BarrierResult(
        x=x,
        objective=stage_objectives[-1],
        outer_iterations=outer,
        newton_iterations=newton_iterations,
        stage_objectives=tuple(stage_objectives),
        barrier_parameter=t,
    )
