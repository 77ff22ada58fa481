"""Optimal Gaussian privacy mechanisms under a false-alarm distortion budget.

The mechanism covariances (Sigma_v^K, Sigma_j^{K-1}) and an auxiliary Pi^K
solve

    minimise    -logdet Pi - logdet Sigma_j
    subject to  [[Sigma_s - Pi, Sigma_sy], [Sigma_sy^T, Sigma_y + Sigma_v]] >= 0,
                Pi > 0,  Sigma_v >= sigma_min I,  Sigma_j >= sigma_min I,
                Sigma~_k <= beta* Sigma_r - margin I   for k = 1..K,

where Sigma~_k = Sigma_r + Sigma_v,k + C L Sigma_v,k L^T C^T
+ C B Sigma_j,k B^T C^T is built from the k-th diagonal blocks (the input
term is absent at k = K). At the optimum -logdet Pi equals twice the mutual
information between s^K and y~^K up to a constant, so the objective is twice
the leakage I[s^K; y~^K] - h[j^{K-1}] up to a constant.

Main functions for external usage:

* `assemble` - builds a `SynthesisProblem` for a model, horizon and budget.
* `solve` - runs the barrier method and returns a `MechanismDesign`.
* `verify` - recomputes every margin and the cost, and checks the
  false-alarm rate by Monte Carlo.

"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from detection_privacy.detector_metrics import (
    beta_star,
    empirical_alarm_rate,
    threshold_alpha,
)
from detection_privacy.estimation import (
    KalmanDesign,
    distorted_residual_cov,
    solve_dare,
)
from detection_privacy.exceptions import (
    ConfigError,
    InfeasibleConfig,
    UnsupportedHorizon,
)
from detection_privacy.lifted_info import (
    LiftedSystem,
    build_lifted,
    information_leakage,
    joint_law,
    measurement_covariance,
)
from detection_privacy.linalg import (
    TOL_PD,
    TOL_RANK,
    inv_sqrtm_pd,
    min_eigenvalue,
    schur_complement,
    symmetrise,
)
from detection_privacy.maxdet import (
    BarrierOptions,
    Congruence,
    LinearMatrixInequality,
    MaxdetProgram,
    SymmetricVariable,
    minimize,
)
from detection_privacy.model_core import SystemModel, validate_model
from detection_privacy.serialise import (
    read_json_file,
    serialise_value,
    write_json_file,
)
from detection_privacy.special_fn import generalized_chi2_draws

logger = logging.getLogger(__name__)

# Dense variables grow as K^2 and the Newton system as K^6.
MAX_FULL_HORIZON = 15


class Structure(str, Enum):
    """Sparsity pattern of the mechanism covariances."""

    FULL = 'full'
    BLOCK_DIAGONAL = 'block_diagonal'


@dataclass(frozen=True)
class SolverOptions:
    """Barrier method settings and the numerical surrogates of the program.

    `sigma_min` bounds every mechanism covariance from below; `cap` bounds
    them from above in directions the detection constraint leaves free.

    """

    gap_tol: float = 1e-7
    sigma_min: float = 1e-8
    cap: float = 1e4
    t0: float = 1.0
    mu: float = 10.0
    max_outer: int = 50
    max_inner: int = 200
    armijo: float = 0.3
    backtrack: float = 0.5
    newton_tol: float = 1e-9

    def barrier_options(self) -> BarrierOptions:
        return BarrierOptions(
            gap_tol=self.gap_tol,
            t0=self.t0,
            mu=self.mu,
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            armijo=self.armijo,
            backtrack=self.backtrack,
            newton_tol=self.newton_tol,
        )


@dataclass(frozen=True, eq=False)
class SynthesisProblem:
    """A fully specified mechanism synthesis instance."""

    lifted: LiftedSystem
    design: KalmanDesign
    model: SystemModel
    K: int
    target_far: float
    epsilon: float
    alpha: float
    beta_star: float
    structure: Structure
    margin: float
    Sigma_s: np.ndarray = field(repr=False)
    Sigma_sy: np.ndarray = field(repr=False)
    Sigma_y_base: np.ndarray = field(repr=False)

    @property
    def constrained(self) -> bool:
        return math.isfinite(self.beta_star)

    @property
    def input_noise_size(self) -> int:
        return (self.K - 1) * self.model.n_u

    @property
    def input_noise_unbounded(self) -> bool:
        """Whether the per-step constraints leave Sigma_j unbounded.

        Sigma_j only enters them through C B Sigma_j B^T C^T, so any
        direction in the null space of C B is free once rank(C B) < n_u.

        """
        if not self.constrained:
            return True
        CB = self.model.C @ self.model.B
        scale = max(np.linalg.norm(self.model.C) * np.linalg.norm(self.model.B), 1.0)
        rank = np.linalg.matrix_rank(CB, tol=TOL_RANK * scale)
        return int(rank) < self.model.n_u

    def step_budget(self) -> np.ndarray:
        """(beta* - 1) Sigma_r - margin I, the room left at every step."""
        n_y = self.model.n_y
        return symmetrise(
            (self.beta_star - 1.0) * self.design.Sigma_r - self.margin * np.eye(n_y)
        )


def assemble(
    model: SystemModel,
    K: int,
    target_far: float,
    epsilon: float,
    structure: Structure | str = Structure.FULL,
    margin: float | None = None,
    design: KalmanDesign | None = None,
) -> SynthesisProblem:
    """Precompute every quantity of the program that does not depend on Sigma_v.

    Args:
        model: Plant; must pass `validate_model`.
        K: Horizon.
        target_far: Undistorted false-alarm rate the detector is tuned to.
        epsilon: Allowed increase of the false-alarm rate.
        structure: `full` dense covariances or `block_diagonal` per-step blocks.
        margin: Closing margin of the strict detection constraints, by
            default 1e-8 times the spectral norm of Sigma_r.
        design: Steady-state filter, solved from the model when omitted.

    """
    structure = Structure(structure)
    report = validate_model(model)
    if not report.passed:
        names = ', '.join(check.name for check in report.failures())
        raise ConfigError(f'model fails assumption checks: {names}')

    if K < 1:
        raise UnsupportedHorizon(f'horizon must be at least 1, got {K}')
    if structure is Structure.FULL and K > MAX_FULL_HORIZON:
        raise UnsupportedHorizon(
            f'full structure supports K <= {MAX_FULL_HORIZON}, got {K}; '
            'use block_diagonal'
        )

    design = solve_dare(model) if design is None else design
    if margin is None:
        margin = 1e-8 * float(np.linalg.norm(design.Sigma_r, 2))

    alpha = threshold_alpha(target_far, model.n_y)
    beta = beta_star(alpha, target_far, epsilon, model.n_y)

    if math.isfinite(beta):
        budget = (beta - 1.0) * design.Sigma_r - margin * np.eye(model.n_y)
        if min_eigenvalue(budget) <= 0.0:
            raise InfeasibleConfig(
                f'beta*={beta:.6g} leaves no room for distortion '
                f'(epsilon={epsilon}, margin={margin:.3e})'
            )

    lifted = build_lifted(model, K)
    Sigma_s = symmetrise(lifted.D_tilde @ lifted.Q @ lifted.D_tilde.T)
    Sigma_sy = lifted.D_tilde @ lifted.Q @ lifted.C_tilde.T

    logger.debug(
        'Assembled K=%d, epsilon=%g, beta*=%.6g, structure=%s',
        K,
        epsilon,
        beta,
        structure.value,
    )

    return SynthesisProblem(
        lifted=lifted,
        design=design,
        model=model,
        K=K,
        target_far=target_far,
        epsilon=epsilon,
        alpha=alpha,
        beta_star=beta,
        structure=structure,
        margin=float(margin),
        Sigma_s=Sigma_s,
        Sigma_sy=Sigma_sy,
        Sigma_y_base=measurement_covariance(lifted, model),
    )


@dataclass(frozen=True, eq=False)
class MechanismDesign:
    """Optimal mechanism covariances and solver diagnostics.

    `cost` is the leakage I[s^K; y~^K] - h[j^{K-1}] in nats, recomputed from
    the returned covariances; `objective` is the value of the program.

    """

    Sigma_v_K: np.ndarray
    Sigma_j_K: np.ndarray
    Pi_K: np.ndarray
    cost: float
    objective: float
    constraint_margins: np.ndarray
    iterations: int
    outer_iterations: int
    solve_status: str
    stage_objectives: tuple[float, ...] = ()
    schur_gap: float = 0.0
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def min_margin(self) -> float:
        return float(np.min(self.constraint_margins, initial=math.inf))

    def step_covariances(self, K: int, n_y: int, n_u: int, step: int):
        """Diagonal blocks Sigma_v,k and Sigma_j,k of 1-indexed `step`."""
        block_v = self.Sigma_v_K[
            (step - 1) * n_y : step * n_y, (step - 1) * n_y : step * n_y
        ]
        if step < K:
            block_j = self.Sigma_j_K[
                (step - 1) * n_u : step * n_u, (step - 1) * n_u : step * n_u
            ]
        else:
            block_j = np.zeros((n_u, n_u))
        return block_v, block_j

    def to_dict(self) -> dict[str, Any]:
        return {
            'Sigma_v_K': serialise_value(self.Sigma_v_K),
            'Sigma_j_K': serialise_value(self.Sigma_j_K),
            'Pi_K': serialise_value(self.Pi_K),
            'cost': serialise_value(self.cost),
            'objective': serialise_value(self.objective),
            'constraint_margins': serialise_value(self.constraint_margins),
            'iterations': self.iterations,
            'outer_iterations': self.outer_iterations,
            'solve_status': self.solve_status,
            'stage_objectives': serialise_value(list(self.stage_objectives)),
            'schur_gap': serialise_value(self.schur_gap),
            'metadata': serialise_value(self.metadata),
        }


def _float_or_inf(value: Any) -> float:
    return math.inf if value is None else float(value)


def design_from_dict(document: dict[str, Any]) -> MechanismDesign:
    """Rebuild a `MechanismDesign` written by `save_design`."""
    return MechanismDesign(
        Sigma_v_K=np.atleast_2d(np.asarray(document['Sigma_v_K'], dtype=float)),
        Sigma_j_K=np.asarray(document['Sigma_j_K'], dtype=float).reshape(
            len(document['Sigma_j_K']), -1
        ),
        Pi_K=np.atleast_2d(np.asarray(document['Pi_K'], dtype=float)),
        cost=float(document['cost']),
        objective=float(document['objective']),
        constraint_margins=np.array(
            [_float_or_inf(value) for value in document['constraint_margins']]
        ),
        iterations=int(document['iterations']),
        outer_iterations=int(document['outer_iterations']),
        solve_status=document['solve_status'],
        stage_objectives=tuple(document.get('stage_objectives', ())),
        schur_gap=float(document.get('schur_gap', 0.0)),
        metadata=document.get('metadata', {}),
    )


def save_design(design: MechanismDesign, design_path: str | Path):
    """Write a `MechanismDesign` as a JSON document."""
    write_json_file(design_path, design.to_dict())


def load_design(design_path: str | Path) -> MechanismDesign:
    """Read a `MechanismDesign` JSON document."""
    return design_from_dict(read_json_file(design_path))


@dataclass(frozen=True, eq=False)
class _Variables:
    Sigma_v: SymmetricVariable
    Sigma_j: SymmetricVariable | None
    Pi: SymmetricVariable

    @property
    def size(self) -> int:
        return sum(
            variable.count
            for variable in (self.Sigma_v, self.Sigma_j, self.Pi)
            if variable is not None
        )


def _build_variables(problem: SynthesisProblem) -> _Variables:
    model = problem.model
    size_v = problem.K * model.n_y
    size_j = problem.input_noise_size
    size_pi = problem.K * model.n_s

    if problem.structure is Structure.BLOCK_DIAGONAL:
        Sigma_v = SymmetricVariable.block_diagonal('Sigma_v', size_v, model.n_y)
    else:
        Sigma_v = SymmetricVariable.full('Sigma_v', size_v)

    offset = Sigma_v.count
    Sigma_j = None
    if size_j > 0:
        if problem.structure is Structure.BLOCK_DIAGONAL:
            Sigma_j = SymmetricVariable.block_diagonal(
                'Sigma_j', size_j, model.n_u, offset
            )
        else:
            Sigma_j = SymmetricVariable.full('Sigma_j', size_j, offset)
        offset += Sigma_j.count

    Pi = SymmetricVariable.full('Pi', size_pi, offset)
    return _Variables(Sigma_v=Sigma_v, Sigma_j=Sigma_j, Pi=Pi)


def _selector(step: int, width: int, total: int) -> np.ndarray:
    """Rows picking 0-indexed block `step` of width `width` out of `total`."""
    selector = np.zeros((width, total))
    selector[:, step * width : (step + 1) * width] = np.eye(width)
    return selector


def _build_program(
    problem: SynthesisProblem,
    variables: _Variables,
    options: SolverOptions,
) -> MaxdetProgram:
    model = problem.model
    size_v = variables.Sigma_v.size
    size_pi = variables.Pi.size
    identity_v = np.eye(size_v)
    identity_pi = np.eye(size_pi)

    joint_constant = np.block(
        [
            [problem.Sigma_s, problem.Sigma_sy],
            [problem.Sigma_sy.T, problem.Sigma_y_base],
        ]
    )
    constraints = [
        LinearMatrixInequality(
            'leakage_lmi',
            joint_constant,
            (
                Congruence(
                    variables.Pi,
                    np.vstack([identity_pi, np.zeros((size_v, size_pi))]),
                    -1.0,
                ),
                Congruence(
                    variables.Sigma_v,
                    np.vstack([np.zeros((size_pi, size_v)), identity_v]),
                    1.0,
                ),
            ),
        ),
        LinearMatrixInequality(
            'Pi_positive',
            np.zeros((size_pi, size_pi)),
            (Congruence(variables.Pi, identity_pi),),
        ),
        LinearMatrixInequality(
            'Sigma_v_lower',
            -options.sigma_min * identity_v,
            (Congruence(variables.Sigma_v, identity_v),),
        ),
    ]
    objective = [
        LinearMatrixInequality(
            'logdet_Pi',
            np.zeros((size_pi, size_pi)),
            (Congruence(variables.Pi, identity_pi),),
        )
    ]

    if variables.Sigma_j is not None:
        size_j = variables.Sigma_j.size
        identity_j = np.eye(size_j)
        constraints.append(
            LinearMatrixInequality(
                'Sigma_j_lower',
                -options.sigma_min * identity_j,
                (Congruence(variables.Sigma_j, identity_j),),
            )
        )
        objective.append(
            LinearMatrixInequality(
                'logdet_Sigma_j',
                np.zeros((size_j, size_j)),
                (Congruence(variables.Sigma_j, identity_j),),
            )
        )
        if problem.input_noise_unbounded:
            constraints.append(
                LinearMatrixInequality(
                    'Sigma_j_cap',
                    options.cap * identity_j,
                    (Congruence(variables.Sigma_j, identity_j, -1.0),),
                )
            )

    if problem.constrained:
        budget = problem.step_budget()
        CL = model.C @ problem.design.L
        CB = model.C @ model.B
        for step in range(problem.K):
            pick_v = _selector(step, model.n_y, size_v)
            terms = [
                Congruence(variables.Sigma_v, pick_v, -1.0),
                Congruence(variables.Sigma_v, CL @ pick_v, -1.0),
            ]
            if variables.Sigma_j is not None and step < problem.K - 1:
                pick_j = _selector(step, model.n_u, variables.Sigma_j.size)
                terms.append(Congruence(variables.Sigma_j, CB @ pick_j, -1.0))
            constraints.append(
                LinearMatrixInequality(
                    f'detection_step_{step + 1}', budget, tuple(terms)
                )
            )
    else:
        constraints.append(
            LinearMatrixInequality(
                'Sigma_v_cap',
                options.cap * identity_v,
                (Congruence(variables.Sigma_v, identity_v, -1.0),),
            )
        )

    return MaxdetProgram(
        size=variables.size,
        objective=tuple(objective),
        constraints=tuple(constraints),
    )


def _largest_generalised_eigenvalue(matrix: np.ndarray, budget: np.ndarray) -> float:
    root = inv_sqrtm_pd(budget)
    return float(np.linalg.eigvalsh(symmetrise(root @ matrix @ root))[-1])


def _initial_point(
    problem: SynthesisProblem,
    variables: _Variables,
    options: SolverOptions,
) -> np.ndarray:
    """Strictly feasible start with per-step blocks shaped like Sigma_r.

    With budget R, Sigma_v,k = s Sigma_r uses at most half of R and
    Sigma_j,k = sigma_j I at most a quarter, and Pi is half the Schur
    complement of the leakage LMI.

    """
    model = problem.model
    Sigma_r = problem.design.Sigma_r
    CL = model.C @ problem.design.L
    CB = model.C @ model.B

    if problem.constrained:
        budget = problem.step_budget()
        scale_v = 0.5 / _largest_generalised_eigenvalue(
            Sigma_r + CL @ Sigma_r @ CL.T, budget
        )
        input_load = _largest_generalised_eigenvalue(CB @ CB.T, budget)
        scale_j = 0.25 / input_load if input_load > TOL_PD else 1.0
    else:
        scale_v = min(1.0, 0.5 * options.cap / float(np.linalg.eigvalsh(Sigma_r)[-1]))
        scale_j = 1.0

    if problem.input_noise_unbounded:
        scale_j = min(scale_j, 0.5 * options.cap)

    Sigma_v = np.kron(np.eye(problem.K), scale_v * Sigma_r)
    if scale_v * float(np.linalg.eigvalsh(Sigma_r)[0]) <= options.sigma_min:
        raise InfeasibleConfig(
            f'distortion budget is below sigma_min={options.sigma_min:.1e}'
        )
    if variables.Sigma_j is not None and scale_j <= options.sigma_min:
        raise InfeasibleConfig(
            f'input noise budget is below sigma_min={options.sigma_min:.1e}'
        )

    Pi = 0.5 * schur_complement(
        problem.Sigma_s, problem.Sigma_sy, problem.Sigma_y_base + Sigma_v
    )

    x0 = np.zeros(variables.size)
    x0[variables.Sigma_v.indices] = variables.Sigma_v.from_matrix(Sigma_v)
    if variables.Sigma_j is not None:
        x0[variables.Sigma_j.indices] = variables.Sigma_j.from_matrix(
            scale_j * np.eye(variables.Sigma_j.size)
        )
    x0[variables.Pi.indices] = variables.Pi.from_matrix(Pi)
    return x0


def step_margins(
    problem: SynthesisProblem,
    Sigma_v_K: np.ndarray,
    Sigma_j_K: np.ndarray,
) -> np.ndarray:
    """Smallest eigenvalue of beta* Sigma_r - Sigma~_k at every step."""
    if not problem.constrained:
        return np.full(problem.K, math.inf)

    model = problem.model
    design = MechanismDesign(
        Sigma_v_K=Sigma_v_K,
        Sigma_j_K=Sigma_j_K,
        Pi_K=np.zeros((0, 0)),
        cost=math.nan,
        objective=math.nan,
        constraint_margins=np.zeros(0),
        iterations=0,
        outer_iterations=0,
        solve_status='',
    )
    margins = []
    for step in range(1, problem.K + 1):
        block_v, block_j = design.step_covariances(
            problem.K, model.n_y, model.n_u, step
        )
        Sigma_tilde = distorted_residual_cov(problem.design, model, block_v, block_j)
        margins.append(
            min_eigenvalue(problem.beta_star * problem.design.Sigma_r - Sigma_tilde)
        )
    return np.array(margins)


def solve(
    problem: SynthesisProblem,
    opts: SolverOptions = SolverOptions(),
) -> MechanismDesign:
    """Solve the synthesis program with the log-det barrier method.

    Raises:
        InfeasibleConfig: No strictly feasible starting point exists.
        NotConverged: The iteration budget was exhausted.
        LineSearchStall: The Newton line search failed.

    """
    variables = _build_variables(problem)
    program = _build_program(problem, variables, opts)
    x0 = _initial_point(problem, variables, opts)

    logger.info(
        'Solving K=%d epsilon=%g (%s): %d variables, %d barrier rows',
        problem.K,
        problem.epsilon,
        problem.structure.value,
        program.size,
        program.barrier_count,
    )
    result = minimize(program, x0, opts.barrier_options())

    Sigma_v_K = symmetrise(variables.Sigma_v.to_matrix(result.x))
    Sigma_j_K = (
        symmetrise(variables.Sigma_j.to_matrix(result.x))
        if variables.Sigma_j is not None
        else np.zeros((0, 0))
    )
    Pi_K = symmetrise(variables.Pi.to_matrix(result.x))

    law = joint_law(
        problem.lifted,
        problem.model,
        np.zeros((problem.K - 1) * problem.model.n_u),
        Sigma_v_K,
    )
    conditional = schur_complement(law.Sigma_s, law.Sigma_sy, law.Sigma_y)

    design = MechanismDesign(
        Sigma_v_K=Sigma_v_K,
        Sigma_j_K=Sigma_j_K,
        Pi_K=Pi_K,
        cost=information_leakage(law, Sigma_j_K),
        objective=result.objective,
        constraint_margins=step_margins(problem, Sigma_v_K, Sigma_j_K),
        iterations=result.newton_iterations,
        outer_iterations=result.outer_iterations,
        solve_status='optimal',
        stage_objectives=result.stage_objectives,
        schur_gap=float(np.trace(conditional - Pi_K)),
        metadata={
            'K': problem.K,
            'target_far': problem.target_far,
            'epsilon': problem.epsilon,
            'alpha': problem.alpha,
            'beta_star': problem.beta_star,
            'structure': problem.structure.value,
            'margin': problem.margin,
            'sigma_min': opts.sigma_min,
            'cap': opts.cap,
            'capped': problem.input_noise_unbounded,
        },
    )
    logger.info(
        'Solved epsilon=%g: cost=%.8g nats, min margin=%.3e, %d Newton steps',
        problem.epsilon,
        design.cost,
        design.min_margin,
        design.iterations,
    )
    return design


@dataclass(frozen=True, eq=False)
class VerificationReport:
    """Independent re-check of a `MechanismDesign`."""

    constraint_margins: np.ndarray
    leakage_lmi_min_eigenvalue: float
    variable_min_eigenvalues: dict[str, float]
    recomputed_cost: float
    cost_error: float
    schur_gap: float
    step_false_alarm_rates: np.ndarray
    step_false_alarm_stderr: np.ndarray
    false_alarm_bound: float
    failures: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst_false_alarm_rate(self) -> float:
        return float(np.max(self.step_false_alarm_rates, initial=0.0))

    def to_dict(self) -> dict[str, Any]:
        return {
            'passed': self.passed,
            'failures': list(self.failures),
            'constraint_margins': serialise_value(self.constraint_margins),
            'leakage_lmi_min_eigenvalue': serialise_value(
                self.leakage_lmi_min_eigenvalue
            ),
            'variable_min_eigenvalues': serialise_value(self.variable_min_eigenvalues),
            'recomputed_cost': serialise_value(self.recomputed_cost),
            'cost_error': serialise_value(self.cost_error),
            'schur_gap': serialise_value(self.schur_gap),
            'step_false_alarm_rates': serialise_value(self.step_false_alarm_rates),
            'step_false_alarm_stderr': serialise_value(self.step_false_alarm_stderr),
            'worst_false_alarm_rate': serialise_value(self.worst_false_alarm_rate),
            'false_alarm_bound': serialise_value(self.false_alarm_bound),
        }


def verify(
    design: MechanismDesign,
    problem: SynthesisProblem,
    samples: int = 100_000,
    seed: int = 0,
    far_tolerance: float = 0.02,
    cost_tolerance: float = 1e-6,
    workers: int = 1,
) -> VerificationReport:
    """Recompute margins, cost and false-alarm rates of a design.

    The false-alarm rate at step k is estimated from `samples` draws of the
    detector statistic for residuals N(0, Sigma~_k), each step on its own
    sub-stream of the `verify` stream. Failures are reported, not raised.

    """
    model = problem.model
    failures = []

    margins = step_margins(problem, design.Sigma_v_K, design.Sigma_j_K)
    if np.any(margins < -TOL_PD):
        failures.append(
            f'detection constraint violated: min margin {margins.min():.3e}'
        )

    Sigma_y = problem.Sigma_y_base + design.Sigma_v_K
    leakage_lmi = np.block(
        [
            [problem.Sigma_s - design.Pi_K, problem.Sigma_sy],
            [problem.Sigma_sy.T, Sigma_y],
        ]
    )
    lmi_eigenvalue = min_eigenvalue(leakage_lmi)
    if lmi_eigenvalue < -TOL_PD * max(1.0, float(np.linalg.norm(leakage_lmi, 2))):
        failures.append(f'leakage LMI violated: min eigenvalue {lmi_eigenvalue:.3e}')

    variable_eigenvalues = {
        'Sigma_v_K': min_eigenvalue(design.Sigma_v_K),
        'Sigma_j_K': min_eigenvalue(design.Sigma_j_K),
        'Pi_K': min_eigenvalue(design.Pi_K),
    }
    for name, value in variable_eigenvalues.items():
        if value < -TOL_PD:
            failures.append(f'{name} is not PSD: min eigenvalue {value:.3e}')

    law = joint_law(
        problem.lifted,
        model,
        np.zeros((problem.K - 1) * model.n_u),
        design.Sigma_v_K,
    )
    recomputed_cost = information_leakage(law, design.Sigma_j_K)
    cost_error = abs(recomputed_cost - design.cost)
    if cost_error > cost_tolerance:
        failures.append(f'cost differs from recomputation by {cost_error:.3e}')

    conditional = schur_complement(law.Sigma_s, law.Sigma_sy, law.Sigma_y)
    schur_gap = float(np.trace(conditional - design.Pi_K))

    rates = []
    errors = []
    root_r = inv_sqrtm_pd(problem.design.Sigma_r)
    for step in range(1, problem.K + 1):
        block_v, block_j = design.step_covariances(
            problem.K, model.n_y, model.n_u, step
        )
        Sigma_tilde = distorted_residual_cov(problem.design, model, block_v, block_j)
        draws = generalized_chi2_draws(
            symmetrise(root_r @ Sigma_tilde @ root_r),
            np.zeros(model.n_y),
            samples,
            seed,
            workers=workers,
            stream_name='verify',
            substream=(step,),
        )
        estimate = empirical_alarm_rate(draws, problem.alpha)
        rates.append(estimate.probability)
        errors.append(estimate.stderr)

    bound = min(problem.target_far + problem.epsilon, 1.0)
    worst = int(np.argmax(rates))
    if rates[worst] > bound + max(far_tolerance, 3.0 * errors[worst]):
        failures.append(
            f'false-alarm rate {rates[worst]:.4f} at step {worst + 1} exceeds '
            f'{bound:.4f}'
        )

    for failure in failures:
        logger.warning('Verification failure: %s', failure)

    return VerificationReport(
        constraint_margins=margins,
        leakage_lmi_min_eigenvalue=lmi_eigenvalue,
        variable_min_eigenvalues=variable_eigenvalues,
        recomputed_cost=recomputed_cost,
        cost_error=cost_error,
        schur_gap=schur_gap,
        step_false_alarm_rates=np.array(rates),
        step_false_alarm_stderr=np.array(errors),
        false_alarm_bound=bound,
        failures=tuple(failures),
    )
