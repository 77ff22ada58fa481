"""Sweeps over the distortion level for the privacy/detection trade-off.

Every experiment returns an `ExperimentResult`: named `xarray.Dataset`
tables along a single `row` dimension and metadata that identifies the
configuration (a SHA-256 config hash), the seeds and the wall time.
`emit_result` writes each table as CSV with a sidecar JSON document that
leaves the wall time out.

Main functions for external usage:

* `run_cost_vs_epsilon` - optimal leakage against epsilon.
* `run_trajectory_comparison` - disclosed measurements and adversary
  estimates for one simulated trajectory per epsilon.
* `run_far_sweep` - false-alarm rate of the distorted residuals.
* `run_detection_and_roc` - detection rate against fault size and ROC curves.
* `emit_result` - CSV tables and sidecar JSON documents.

Synthesis rows run in a thread pool; Monte Carlo rows run in order and
shard their draws over the same number of workers.

"""

import logging
import math
import time
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import xarray as xr
from numpy.typing import ArrayLike

from detection_privacy.detector_metrics import (
    detection_rate_no_privacy,
    detection_rate_with_privacy,
    distorted_statistic_draws,
    empirical_alarm_rate,
    false_alarm_rate_analytic,
    fault_residual_mean,
    roc_curve,
    threshold_alpha,
)
from detection_privacy.estimation import (
    KalmanDesign,
    distorted_residual_cov,
    mmse_estimate,
    solve_dare,
)
from detection_privacy.exceptions import (
    ConfigError,
    InfeasibleConfig,
    LineSearchStall,
    NotConverged,
)
from detection_privacy.lifted_info import (
    JointLaw,
    LiftedSystem,
    build_lifted,
    joint_law,
)
from detection_privacy.linalg import FAR_BUDGET_TOLERANCE, solve_pd
from detection_privacy.model_core import (
    SystemModel,
    apply_mechanism,
    load_model,
    load_reactor_model,
    model_to_dict,
    simulate,
)
from detection_privacy.serialise import (
    get_config_hash,
    is_varying_key,
    read_json_file,
    write_json_file,
    write_table,
)
from detection_privacy.synthesis import (
    MechanismDesign,
    SolverOptions,
    Structure,
    SynthesisProblem,
    assemble,
    solve,
)

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

DEFAULT_EPSILONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
DEFAULT_DELTAS = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0)
DEFAULT_DETECTION_EPSILONS = (0.0, 0.1, 0.3, 0.5)
DEFAULT_ROC_DELTAS = (0.1, 1.0, 2.0, 3.0, 4.0)
DEFAULT_ROC_EPSILONS = (0.0, 0.01, 0.3, 0.5)
DEFAULT_ROC_FAR_GRID = tuple(round(0.05 * index, 2) for index in range(1, 20))
MARKED_FAR = 0.3
MIN_SAMPLES = 1_000
FAR_MC_TOLERANCE = 0.02

STRUCTURE_ALIASES = {
    'full': Structure.FULL,
    'block': Structure.BLOCK_DIAGONAL,
    'block_diagonal': Structure.BLOCK_DIAGONAL,
}

_TUPLE_FIELDS = (
    'epsilons',
    'deltas',
    'detection_epsilons',
    'roc_deltas',
    'roc_epsilons',
    'roc_far_grid',
    'trajectory_epsilons',
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment needs besides the plant itself.

    `model_path` of None selects the packaged reactor case study. When
    `trajectory_epsilons` is None it defaults to 0, 0.1, 0.75 and the
    unconstrained level 1 - target_far.

    """

    model_path: str | None = None
    K: int = 10
    target_far: float = 0.1
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    detection_epsilons: tuple[float, ...] = DEFAULT_DETECTION_EPSILONS
    roc_deltas: tuple[float, ...] = DEFAULT_ROC_DELTAS
    roc_epsilons: tuple[float, ...] = DEFAULT_ROC_EPSILONS
    roc_far_grid: tuple[float, ...] = DEFAULT_ROC_FAR_GRID
    marked_far: float = MARKED_FAR
    trajectory_epsilons: tuple[float, ...] | None = None
    samples: int = 100_000
    seed: int = 0
    structure: str = Structure.FULL.value
    margin: float | None = None
    cap: float = 1e4
    workers: int = 1
    out_dir: str = 'results'

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(
                    self, name, tuple(float(item) for item in np.atleast_1d(value))
                )

        if self.trajectory_epsilons is None:
            object.__setattr__(
                self,
                'trajectory_epsilons',
                (0.0, 0.1, 0.75, round(1.0 - self.target_far, 12)),
            )

        structure = STRUCTURE_ALIASES.get(str(self.structure).lower())
        if structure is None:
            raise ConfigError(
                f'structure must be one of {sorted(STRUCTURE_ALIASES)}, '
                f'got {self.structure!r}'
            )
        object.__setattr__(self, 'structure', structure.value)

        self._validate()

    def _validate(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError(f'K must be a positive integer, got {self.K}')
        if not 0.0 < self.target_far < 1.0:
            raise ConfigError(f'target_far must lie in (0, 1), got {self.target_far}')
        if not self.epsilons:
            raise ConfigError('the epsilon grid must not be empty')

        upper = 1.0 - self.target_far + FAR_BUDGET_TOLERANCE
        for name in (
            'epsilons',
            'detection_epsilons',
            'roc_epsilons',
            'trajectory_epsilons',
        ):
            bad = [value for value in getattr(self, name) if not 0.0 <= value <= upper]
            if bad:
                raise ConfigError(
                    f'{name} must lie in [0, 1 - target_far], got {bad}'
                )

        if any(value < 0.0 for value in self.deltas + self.roc_deltas):
            raise ConfigError('fault magnitudes must be non-negative')
        grid = np.asarray(self.roc_far_grid)
        if grid.size == 0 or np.any(grid <= 0.0) or np.any(grid >= 1.0):
            raise ConfigError('roc_far_grid must be non-empty and inside (0, 1)')
        if not 0.0 < self.marked_far < 1.0:
            raise ConfigError(f'marked_far must lie in (0, 1), got {self.marked_far}')
        if self.samples < MIN_SAMPLES:
            raise ConfigError(
                f'samples must be at least {MIN_SAMPLES}, got {self.samples}'
            )
        if self.workers < 1:
            raise ConfigError(f'workers must be at least 1, got {self.workers}')
        if self.cap <= 0.0:
            raise ConfigError(f'cap must be positive, got {self.cap}')
        if self.margin is not None and self.margin < 0.0:
            raise ConfigError(f'margin must be non-negative, got {self.margin}')

    @classmethod
    def from_dict(cls, document: dict[str, Any]) -> 'ExperimentConfig':
        """Build a configuration, rejecting keys that are not fields."""
        known = {config_field.name for config_field in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            raise ConfigError(f'unknown configuration keys: {unknown}')
        try:
            return cls(**document)
        except TypeError as exception:
            raise ConfigError(str(exception)) from exception

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(cap=self.cap)

    def load_model(self) -> SystemModel:
        if self.model_path is None:
            return load_reactor_model()
        return load_model(self.model_path)


def load_config(
    config_path: str | Path | None = None,
    **overrides: Any,
) -> ExperimentConfig:
    """Build an `ExperimentConfig` from an optional JSON document.

    Overrides that are not None take precedence over values from the file,
    and defaults fill in the rest.

    """
    document: dict[str, Any] = {}
    if config_path is not None:
        try:
            document = read_json_file(config_path)
        except (OSError, ValueError) as exception:
            raise ConfigError(f'cannot read {config_path}: {exception}') from exception
        if not isinstance(document, dict):
            raise ConfigError(f'{config_path} does not hold a JSON object')

    document.update(
        {key: value for key, value in overrides.items() if value is not None}
    )
    return ExperimentConfig.from_dict(document)


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Named tables produced by one experiment and their provenance."""

    name: str
    tables: dict[str, xr.Dataset]
    metadata: dict[str, Any] = field(default_factory=dict)


def make_table(columns: dict[str, ArrayLike], **attributes: Any) -> xr.Dataset:
    """One-dimensional table with a data variable per column, in order."""
    return xr.Dataset(
        {name: ('row', np.asarray(values)) for name, values in columns.items()},
        attrs=attributes,
    )


def reactor_inputs(K: int, n_u: int = 1) -> np.ndarray:
    """Input profile u_k = 50 cos(0.5 k)^2 for k = 1..K-1, on every channel."""
    steps = np.arange(1, K, dtype=float)
    profile = 50.0 * np.cos(0.5 * steps) ** 2
    return np.repeat(profile[:, np.newaxis], n_u, axis=1)


def _map_rows(function: Callable[[T], R], items: Iterable[T], workers: int) -> list[R]:
    """Apply `function` to every item, in parallel, keeping input order."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(function, items))
    return [function(item) for item in items]


@dataclass(frozen=True, eq=False)
class _Synthesis:
    epsilon: float
    status: str
    problem: SynthesisProblem | None = None
    mechanism: MechanismDesign | None = None

    @property
    def solved(self) -> bool:
        return self.mechanism is not None


def _synthesise(
    model: SystemModel,
    design: KalmanDesign,
    config: ExperimentConfig,
    epsilon: float,
) -> _Synthesis:
    """Synthesise one mechanism, turning solver failures into a row status."""
    try:
        problem = assemble(
            model,
            config.K,
            config.target_far,
            epsilon,
            structure=config.structure,
            margin=config.margin,
            design=design,
        )
        mechanism = solve(problem, config.solver_options())
    except InfeasibleConfig as exception:
        logger.warning('epsilon=%g is infeasible: %s', epsilon, exception)
        return _Synthesis(epsilon=epsilon, status='infeasible')
    except (NotConverged, LineSearchStall) as exception:
        logger.warning('epsilon=%g did not converge: %s', epsilon, exception)
        return _Synthesis(epsilon=epsilon, status='not_converged')

    return _Synthesis(
        epsilon=epsilon, status='optimal', problem=problem, mechanism=mechanism
    )


def _synthesise_all(
    model: SystemModel,
    design: KalmanDesign,
    config: ExperimentConfig,
    epsilons: Sequence[float],
) -> list[_Synthesis]:
    return _map_rows(
        lambda epsilon: _synthesise(model, design, config, epsilon),
        epsilons,
        config.workers,
    )


def step_residual_covariances(
    problem: SynthesisProblem,
    mechanism: MechanismDesign,
) -> list[np.ndarray]:
    """Distorted residual covariance Sigma~_k at every step k = 1..K."""
    model = problem.model
    covariances = []
    for step in range(1, problem.K + 1):
        block_v, block_j = mechanism.step_covariances(
            problem.K, model.n_y, model.n_u, step
        )
        covariances.append(
            distorted_residual_cov(problem.design, model, block_v, block_j)
        )
    return covariances


def _worst_step_covariance(synthesis: _Synthesis) -> np.ndarray:
    """Sigma~_k of the step with the largest analytic false-alarm rate."""
    problem = synthesis.problem
    covariances = step_residual_covariances(problem, synthesis.mechanism)
    rates = [
        false_alarm_rate_analytic(covariance, problem.design.Sigma_r, problem.alpha)
        for covariance in covariances
    ]
    return covariances[int(np.argmax(rates))]


def _base_metadata(
    config: ExperimentConfig,
    model: SystemModel,
    started: float,
) -> dict[str, Any]:
    return {
        'config': config.to_dict(),
        'config_hash': get_config_hash(
            {'config': config.to_dict(), 'model': model_to_dict(model)}
        ),
        'seeds': [config.seed],
        'samples': config.samples,
        'K': config.K,
        'structure': config.structure,
        'target_far': config.target_far,
        'wall_time_seconds': time.perf_counter() - started,
    }


def run_cost_vs_epsilon(
    config: ExperimentConfig,
    model: SystemModel | None = None,
) -> ExperimentResult:
    """Optimal leakage for every epsilon of `config.epsilons`.

    A row whose synthesis fails keeps its epsilon, gets a NaN cost and a
    status of `infeasible` or `not_converged`; the sweep continues.

    """
    started = time.perf_counter()
    model = config.load_model() if model is None else model
    design = solve_dare(model)

    logger.info('Cost sweep over %d epsilon values', len(config.epsilons))
    rows = _synthesise_all(model, design, config, config.epsilons)

    costs = [row.mechanism.cost if row.solved else math.nan for row in rows]
    table = make_table(
        {
            'epsilon': [row.epsilon for row in rows],
            'cost': costs,
            'iterations': [
                row.mechanism.iterations if row.solved else 0 for row in rows
            ],
            'min_margin': [
                row.mechanism.min_margin if row.solved else math.nan for row in rows
            ],
            'status': [row.status for row in rows],
        },
        units_cost='nats',
    )

    solved_costs = [cost for cost in costs if math.isfinite(cost)]
    non_increasing = all(
        later <= earlier + 1e-8 * max(1.0, abs(earlier))
        for earlier, later in zip(solved_costs, solved_costs[1:])
    )
    if not non_increasing:
        logger.warning('Optimal cost is not non-increasing over the epsilon grid')

    metadata = _base_metadata(config, model, started)
    metadata['cost_non_increasing'] = non_increasing
    return ExperimentResult(
        name='cost_vs_epsilon', tables={'cost_vs_epsilon': table}, metadata=metadata
    )


def _mechanism_covariances(
    model: SystemModel,
    design: KalmanDesign,
    config: ExperimentConfig,
    epsilon: float,
) -> tuple[str, np.ndarray | None, np.ndarray | None]:
    """Mechanism covariances for one epsilon; epsilon = 0 means no mechanism."""
    K = config.K
    if epsilon == 0.0:
        return (
            'no_mechanism',
            np.zeros((K * model.n_y, K * model.n_y)),
            np.zeros(((K - 1) * model.n_u, (K - 1) * model.n_u)),
        )
    synthesis = _synthesise(model, design, config, epsilon)
    if not synthesis.solved:
        return synthesis.status, None, None
    mechanism = synthesis.mechanism
    return synthesis.status, mechanism.Sigma_v_K, mechanism.Sigma_j_K


def _input_noise_mse(
    lifted: LiftedSystem,
    law: JointLaw,
    Sigma_j_K: np.ndarray,
) -> float:
    """Squared error the input noise adds to an estimate built on u~.

    The estimator centres s and y~ on the state mean of u~ = u + j, so its
    error picks up -(D~ - W C~) N_K j for the gain W = Sigma_sy Sigma_y^{-1}.

    """
    if Sigma_j_K.size == 0:
        return 0.0
    gain = solve_pd(law.Sigma_y, law.Sigma_sy.T).T
    mismatch = (lifted.D_tilde - gain @ lifted.C_tilde) @ lifted.N_K
    return float(np.trace(mismatch @ Sigma_j_K @ mismatch.T))


def run_trajectory_comparison(
    config: ExperimentConfig,
    model: SystemModel | None = None,
) -> ExperimentResult:
    """Disclosed data and MMSE estimates of s along one simulated trajectory.

    The plant is driven by `reactor_inputs` without faults. The clean
    estimate conditions the undistorted joint law on y; the distorted one
    conditions the joint law with the synthesised Sigma_v on y~, with the
    state mean built from the disclosed inputs u~. `mse_distorted` is the
    expected squared error per entry of s^K, including the error the input
    noise causes through that mean; the `sq_error_*` columns are the realised
    errors of the simulated run. Per-step columns cover the first
    measurement and private output channels.

    """
    started = time.perf_counter()
    model = config.load_model() if model is None else model
    design = solve_dare(model)
    K = config.K

    inputs = reactor_inputs(K, model.n_u)
    trajectory = simulate(model, inputs, seed=config.seed, horizon=K)
    lifted = build_lifted(model, K)

    clean_law = joint_law(
        lifted, model, inputs.reshape(-1), np.zeros((K * model.n_y, K * model.n_y))
    )
    clean = mmse_estimate(
        clean_law.mean_s,
        clean_law.mean_y,
        clean_law.Sigma_s,
        clean_law.Sigma_sy,
        clean_law.Sigma_y,
        trajectory.measurements.reshape(-1),
    )
    s_hat_clean = clean.s_hat.reshape(K, model.n_s)
    mse_clean = clean.mse / (K * model.n_s)
    private = trajectory.private_outputs.reshape(-1)
    sq_error_clean = float(np.mean((clean.s_hat - private) ** 2))

    epsilons = config.trajectory_epsilons
    logger.info('Trajectory comparison over %d epsilon values', len(epsilons))
    mechanisms = _map_rows(
        lambda epsilon: _mechanism_covariances(model, design, config, epsilon),
        epsilons,
        config.workers,
    )

    tables = {}
    summary: dict[str, list[Any]] = {
        'epsilon': [],
        'mse_clean': [],
        'mse_distorted': [],
        'sq_error_clean': [],
        'sq_error_distorted': [],
        'mean_abs_distortion': [],
        'status': [],
    }

    for epsilon, (status, Sigma_v_K, Sigma_j_K) in zip(epsilons, mechanisms):
        summary['epsilon'].append(epsilon)
        summary['mse_clean'].append(mse_clean)
        summary['sq_error_clean'].append(sq_error_clean)
        summary['status'].append(status)

        if Sigma_v_K is None:
            summary['mse_distorted'].append(math.nan)
            summary['sq_error_distorted'].append(math.nan)
            summary['mean_abs_distortion'].append(math.nan)
            continue

        distorted = apply_mechanism(trajectory, Sigma_v_K, Sigma_j_K, seed=config.seed)
        law = joint_law(lifted, model, distorted.inputs.reshape(-1), Sigma_v_K)
        estimate = mmse_estimate(
            law.mean_s,
            law.mean_y,
            law.Sigma_s,
            law.Sigma_sy,
            law.Sigma_y,
            distorted.measurements.reshape(-1),
        )
        s_hat_distorted = estimate.s_hat.reshape(K, model.n_s)
        distortion = distorted.measurements[:, 0] - trajectory.measurements[:, 0]

        mse = estimate.mse + _input_noise_mse(lifted, law, Sigma_j_K)
        summary['mse_distorted'].append(mse / (K * model.n_s))
        summary['sq_error_distorted'].append(
            float(np.mean((estimate.s_hat - private) ** 2))
        )
        summary['mean_abs_distortion'].append(float(np.mean(np.abs(distortion))))

        tables[f'eps_{epsilon:g}'] = make_table(
            {
                'k': np.arange(1, K + 1),
                'y1': trajectory.measurements[:, 0],
                'ytilde1': distorted.measurements[:, 0],
                's': trajectory.private_outputs[:, 0],
                's_hat_clean': s_hat_clean[:, 0],
                's_hat_distorted': s_hat_distorted[:, 0],
            },
            epsilon=epsilon,
            status=status,
        )

    tables = {'summary': make_table(summary), **tables}
    return ExperimentResult(
        name='trajectory',
        tables=tables,
        metadata=_base_metadata(config, model, started),
    )


def run_far_sweep(
    config: ExperimentConfig,
    model: SystemModel | None = None,
) -> ExperimentResult:
    """False-alarm rate of the distorted residuals against epsilon.

    At every step the rate is computed from the gamma fit and estimated by
    Monte Carlo under N(0, Sigma~_k); each column reports its worst step.
    epsilon = 0 uses the undistorted residual law. A row whose empirical
    rate exceeds target_far + epsilon by more than the Monte Carlo tolerance
    gets status `bound_exceeded`.

    """
    started = time.perf_counter()
    model = config.load_model() if model is None else model
    design = solve_dare(model)
    alpha = threshold_alpha(config.target_far, model.n_y)

    positive = [epsilon for epsilon in config.epsilons if epsilon > 0.0]
    syntheses = dict(zip(positive, _synthesise_all(model, design, config, positive)))

    columns: dict[str, list[Any]] = {
        'epsilon': [],
        'far_analytic': [],
        'far_empirical': [],
        'stderr': [],
        'bound': [],
        'status': [],
    }

    for epsilon in config.epsilons:
        bound = min(config.target_far + epsilon, 1.0)
        columns['epsilon'].append(epsilon)
        columns['bound'].append(bound)

        if epsilon == 0.0:
            covariances = [design.Sigma_r]
            status = 'no_mechanism'
        else:
            synthesis = syntheses[epsilon]
            if not synthesis.solved:
                columns['far_analytic'].append(math.nan)
                columns['far_empirical'].append(math.nan)
                columns['stderr'].append(math.nan)
                columns['status'].append(synthesis.status)
                continue
            covariances = step_residual_covariances(
                synthesis.problem, synthesis.mechanism
            )
            status = synthesis.status

        analytic = max(
            false_alarm_rate_analytic(covariance, design.Sigma_r, alpha)
            for covariance in covariances
        )
        estimates = [
            empirical_alarm_rate(
                distorted_statistic_draws(
                    np.zeros(model.n_y),
                    covariance,
                    design.Sigma_r,
                    config.samples,
                    config.seed,
                    workers=config.workers,
                ),
                alpha,
            )
            for covariance in covariances
        ]
        worst = max(estimates, key=lambda estimate: estimate.probability)

        if worst.probability > bound + max(FAR_MC_TOLERANCE, 3.0 * worst.stderr):
            logger.warning(
                'epsilon=%g: empirical false-alarm rate %.4f exceeds bound %.4f',
                epsilon,
                worst.probability,
                bound,
            )
            status = 'bound_exceeded'

        columns['far_analytic'].append(analytic)
        columns['far_empirical'].append(worst.probability)
        columns['stderr'].append(worst.stderr)
        columns['status'].append(status)
        logger.info(
            'epsilon=%g: false-alarm rate %.4f (analytic %.4f)',
            epsilon,
            worst.probability,
            analytic,
        )

    return ExperimentResult(
        name='far_sweep',
        tables={'far_sweep': make_table(columns, alpha=alpha)},
        metadata=_base_metadata(config, model, started),
    )


def roc_far_grid(config: ExperimentConfig) -> np.ndarray:
    """The ROC target grid with the marked point merged in."""
    return np.unique(
        np.round(np.append(config.roc_far_grid, config.marked_far), 12)
    )


def run_detection_and_roc(
    config: ExperimentConfig,
    model: SystemModel | None = None,
    with_detection: bool = True,
    with_roc: bool = True,
) -> ExperimentResult:
    """Detection rate against fault size, and ROC curves per (delta, epsilon).

    The fault residual mean is the steady-state r^delta of a constant fault
    through the model's G and H. Distorted rates use Sigma~_k of the step
    with the largest false-alarm rate; epsilon = 0 detection rates are exact
    non-central chi-squared values.

    Tables:
        detection: epsilon, delta, detection_rate, stderr, method, status.
        auc: delta, epsilon, auc, auc_stderr, status.
        roc_delta_<delta>_eps_<epsilon>: target_far, alpha, far, det_rate,
            stderr, marked.

    `with_detection` and `with_roc` select which of the tables are computed.

    """
    started = time.perf_counter()
    model = config.load_model() if model is None else model
    design = solve_dare(model)
    alpha = threshold_alpha(config.target_far, model.n_y)

    detection_epsilons = config.detection_epsilons if with_detection else ()
    roc_deltas = config.roc_deltas if with_roc else ()
    roc_epsilons = config.roc_epsilons if with_roc else ()

    positive = sorted(
        {
            epsilon
            for epsilon in detection_epsilons + roc_epsilons
            if epsilon > 0.0
        }
    )
    syntheses = dict(zip(positive, _synthesise_all(model, design, config, positive)))

    def residual_covariance(epsilon: float) -> tuple[str, np.ndarray | None]:
        if epsilon == 0.0:
            return 'ok', design.Sigma_r
        synthesis = syntheses[epsilon]
        if not synthesis.solved:
            return synthesis.status, None
        return 'ok', _worst_step_covariance(synthesis)

    def residual_mean(delta: float) -> np.ndarray:
        return fault_residual_mean(model, design, delta).steady_state

    detection: dict[str, list[Any]] = {
        'epsilon': [],
        'delta': [],
        'detection_rate': [],
        'stderr': [],
        'method': [],
        'status': [],
    }
    for epsilon in detection_epsilons:
        status, Sigma_tilde = residual_covariance(epsilon)
        for delta in config.deltas:
            detection['epsilon'].append(epsilon)
            detection['delta'].append(delta)
            detection['status'].append(status)
            if Sigma_tilde is None:
                detection['detection_rate'].append(math.nan)
                detection['stderr'].append(math.nan)
                detection['method'].append('none')
            elif epsilon == 0.0:
                detection['detection_rate'].append(
                    detection_rate_no_privacy(
                        residual_mean(delta), design.Sigma_r, alpha
                    )
                )
                detection['stderr'].append(0.0)
                detection['method'].append('analytic')
            else:
                estimate = detection_rate_with_privacy(
                    residual_mean(delta),
                    Sigma_tilde,
                    design.Sigma_r,
                    alpha,
                    config.samples,
                    config.seed,
                    workers=config.workers,
                )
                detection['detection_rate'].append(estimate.probability)
                detection['stderr'].append(estimate.stderr)
                detection['method'].append('monte_carlo')
        logger.info('Detection rates done for epsilon=%g', epsilon)

    grid = roc_far_grid(config)
    marked = np.isclose(grid, config.marked_far)
    tables = {}
    if with_detection:
        tables['detection'] = make_table(detection, alpha=alpha)
    areas: dict[str, list[Any]] = {
        'delta': [],
        'epsilon': [],
        'auc': [],
        'auc_stderr': [],
        'status': [],
    }

    for delta in roc_deltas:
        for epsilon in roc_epsilons:
            status, Sigma_tilde = residual_covariance(epsilon)
            areas['delta'].append(delta)
            areas['epsilon'].append(epsilon)
            areas['status'].append(status)
            if Sigma_tilde is None:
                areas['auc'].append(math.nan)
                areas['auc_stderr'].append(math.nan)
                continue

            curve = roc_curve(
                residual_mean(delta),
                Sigma_tilde,
                design.Sigma_r,
                grid,
                config.samples,
                config.seed,
                workers=config.workers,
            )
            areas['auc'].append(curve.auc())
            areas['auc_stderr'].append(curve.auc_stderr())
            tables[f'roc_delta_{delta:g}_eps_{epsilon:g}'] = make_table(
                {
                    'target_far': curve.target_fars,
                    'alpha': curve.alphas,
                    'far': curve.false_alarm_rates,
                    'det_rate': curve.detection_rates,
                    'stderr': curve.stderr,
                    'marked': marked,
                },
                delta=delta,
                epsilon=epsilon,
            )
        logger.info('ROC curves done for delta=%g', delta)

    if with_roc:
        tables['auc'] = make_table(areas)
    return ExperimentResult(
        name='detection' if with_detection else 'roc',
        tables=tables,
        metadata=_base_metadata(config, model, started),
    )


def emit_result(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    """Write every table as `<name>_<table>.csv` with a `.json` sidecar.

    The sidecar holds the SHA-256 of the CSV bytes (`table_hash`), the
    column names, the row count and the result metadata without its varying
    keys, so reruns write identical sidecars. Returns the CSV paths in table
    order.

    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    metadata = {
        key: value
        for key, value in result.metadata.items()
        if not is_varying_key(key)
    }
    logger.info(
        'Emitting %s, computed in %.3f s',
        result.name,
        result.metadata.get('wall_time_seconds', math.nan),
    )

    csv_paths = []
    for table_name, table in result.tables.items():
        stem = (
            result.name if table_name == result.name else f'{result.name}_{table_name}'
        )
        csv_path = out_dir / f'{stem}.csv'
        table_hash = write_table(table, csv_path)
        write_json_file(
            out_dir / f'{stem}.json',
            {
                **metadata,
                'experiment': result.name,
                'table': table_name,
                'columns': list(table.data_vars),
                'rows': int(table.sizes.get('row', 0)),
                'attributes': dict(table.attrs),
                'table_hash': table_hash,
            },
        )
        csv_paths.append(csv_path)
        logger.info('Wrote %s', csv_path)

    return csv_paths
