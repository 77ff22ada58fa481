"""Plant model, trajectory simulation and the additive privacy mechanism.

The plant is the linear stochastic system

    x_{k+1} = A x_k + B u_k + t_k + G delta_k
    y_k     = C x_k + w_k + H delta_k
    s_k     = D x_k

with Gaussian disturbances t_k ~ N(0, Sigma_t), w_k ~ N(0, Sigma_w) and
initial state x_1 ~ N(mu_x1, Sigma_x1). The privacy mechanism discloses
y~_k = y_k + v_k and u~_k = u_k + j_k with jointly Gaussian noise sequences.

Main functions for external usage:

* `validate_model` - checks the standing assumptions on a `SystemModel`.
* `simulate` - draws one trajectory (or a batch of them) from the plant.
* `apply_mechanism` - distorts a trajectory with stacked noise covariances.
* `load_model` / `save_model` - JSON documents with row-major matrices.
* `load_reactor_model` - the packaged chemical reactor case study.

"""

import logging
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from detection_privacy.exceptions import DimensionMismatch, HorizonMismatch
from detection_privacy.linalg import (
    TOL_PD,
    TOL_RANK,
    check_psd,
    min_eigenvalue,
    sqrtm_psd,
)
from detection_privacy.serialise import read_json_file, serialise_value, write_json_file
from detection_privacy.streams import stream

logger = logging.getLogger(__name__)

REACTOR_MODEL_FILE = 'reactor.json'

MODEL_FIELDS = (
    'A',
    'B',
    'C',
    'D',
    'G',
    'H',
    'Sigma_t',
    'Sigma_w',
    'mu_x1',
    'Sigma_x1',
)


def _frozen_array(value: ArrayLike, vector: bool = False) -> np.ndarray:
    """Copy `value` into a read-only float array (2-D unless `vector`)."""
    array = np.array(value, dtype=float)
    array = array.reshape(-1) if vector else np.atleast_2d(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Matrices and initial-state statistics of the monitored plant.

    Shapes are not checked on construction; `validate_model` reports
    inconsistent dimensions as a `DimensionMismatch`.

    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray
    H: np.ndarray
    Sigma_t: np.ndarray
    Sigma_w: np.ndarray
    mu_x1: np.ndarray
    Sigma_x1: np.ndarray

    def __post_init__(self):
        for name in MODEL_FIELDS:
            value = _frozen_array(getattr(self, name), vector=name == 'mu_x1')
            object.__setattr__(self, name, value)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_s(self) -> int:
        return self.D.shape[0]

    @property
    def n_delta(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class ValidationCheck:
    """Outcome of a single model assumption check."""

    name: str
    passed: bool
    measured: float
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    """All assumption checks run by `validate_model`."""

    checks: tuple[ValidationCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> list[ValidationCheck]:
        return [check for check in self.checks if not check.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            'passed': self.passed,
            'checks': [
                {
                    'name': check.name,
                    'passed': check.passed,
                    'measured': check.measured,
                    'detail': check.detail,
                }
                for check in self.checks
            ],
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A simulated plant trajectory over horizon K.

    Arrays have the time index on the second-to-last axis; batches produced
    with `simulate(..., runs=N)` carry a leading run axis. Inputs and faults
    are deterministic and shared by every run of a batch.

    """

    model: SystemModel
    states: np.ndarray
    measurements: np.ndarray
    private_outputs: np.ndarray
    inputs: np.ndarray
    faults: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.shape[-2]


@dataclass(frozen=True, eq=False)
class DistortedTrajectory:
    """A trajectory after the privacy mechanism has been applied.

    `apparent_states` follow the plant recursion driven by the distorted
    inputs, x~_{k+1} = A x~_k + B u~_k + t_k + G delta_k with x~_1 = x_1.

    """

    base: Trajectory
    measurement_noise: np.ndarray
    input_noise: np.ndarray
    measurements: np.ndarray
    inputs: np.ndarray
    apparent_states: np.ndarray = field(repr=False)

    @property
    def horizon(self) -> int:
        return self.base.horizon


def check_dimensions(model: SystemModel):
    """Raise `DimensionMismatch` listing every inconsistent shape."""
    n_x, n_u, n_y, n_s, n_delta = (
        model.n_x,
        model.n_u,
        model.n_y,
        model.n_s,
        model.n_delta,
    )
    expected = {
        'A': (n_x, n_x),
        'B': (n_x, n_u),
        'C': (n_y, n_x),
        'D': (n_s, n_x),
        'G': (n_x, n_delta),
        'H': (n_y, n_delta),
        'Sigma_t': (n_x, n_x),
        'Sigma_w': (n_y, n_y),
        'mu_x1': (n_x,),
        'Sigma_x1': (n_x, n_x),
    }
    problems = [
        f'{name} has shape {getattr(model, name).shape}, expected {shape}'
        for name, shape in expected.items()
        if getattr(model, name).shape != shape
    ]

    if problems:
        raise DimensionMismatch('; '.join(problems))


def validate_model(model: SystemModel) -> ValidationReport:
    """Check the standing assumptions on the plant.

    Dimensions are checked first and raise; the remaining checks are reported:

    * Sigma_t, Sigma_w and Sigma_x1 symmetric positive definite.
    * D full row rank.
    * (A, C) detectable (PBH rank test on every eigenvalue with |lambda| >= 1).

    """
    check_dimensions(model)

    checks = [
        _positive_definite_check(name, getattr(model, name))
        for name in ('Sigma_t', 'Sigma_w', 'Sigma_x1')
    ]
    checks.append(_full_row_rank_check(model.D))
    checks.append(_detectability_check(model.A, model.C))

    report = ValidationReport(tuple(checks))
    for failure in report.failures():
        logger.warning('Model check %s failed: %s', failure.name, failure.detail)

    return report


def _positive_definite_check(name: str, matrix: np.ndarray) -> ValidationCheck:
    smallest = min_eigenvalue(matrix)
    symmetric = bool(np.allclose(matrix, matrix.T, rtol=1e-10, atol=TOL_PD))
    return ValidationCheck(
        name=f'{name}_positive_definite',
        passed=symmetric and smallest > TOL_PD,
        measured=smallest,
        detail=f'min eigenvalue {smallest:.6g}, symmetric={symmetric}',
    )


def _full_row_rank_check(D: np.ndarray) -> ValidationCheck:
    singular_values = np.linalg.svd(D, compute_uv=False)
    largest = float(singular_values[0]) if singular_values.size else 0.0
    smallest = (
        float(singular_values[-1]) if singular_values.size == D.shape[0] else 0.0
    )
    return ValidationCheck(
        name='D_full_row_rank',
        passed=largest > 0.0 and smallest > TOL_RANK * largest,
        measured=smallest,
        detail=f'min singular value {smallest:.6g} (largest {largest:.6g})',
    )


def _numerical_rank(matrix: np.ndarray) -> int:
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return 0
    return int(np.sum(singular_values > TOL_RANK * singular_values[0]))


def _detectability_check(A: np.ndarray, C: np.ndarray) -> ValidationCheck:
    n_x = A.shape[0]
    ranks = [
        _numerical_rank(np.vstack([A - eigenvalue * np.eye(n_x), C]))
        for eigenvalue in np.linalg.eigvals(A)
        if abs(eigenvalue) >= 1.0
    ]
    worst = min(ranks, default=n_x)
    return ValidationCheck(
        name='A_C_detectable',
        passed=worst == n_x,
        measured=float(worst),
        detail=(
            f'{len(ranks)} eigenvalue(s) on or outside the unit circle, '
            f'minimum PBH rank {worst} of {n_x}'
        ),
    )


def _as_sequence(values: ArrayLike | None, width: int, name: str) -> np.ndarray:
    """Coerce a sequence of vectors into a (length, width) float array."""
    array = np.asarray([] if values is None else values, dtype=float)
    if array.size == 0:
        return np.zeros((0, width))
    if array.ndim == 1 and width == 1:
        array = array[:, np.newaxis]
    if array.ndim != 2 or array.shape[1] != width:
        raise DimensionMismatch(
            f'{name} must be a sequence of {width}-vectors, got shape {array.shape}'
        )
    return array


def simulate(
    model: SystemModel,
    inputs: ArrayLike,
    faults: ArrayLike | None = None,
    seed: int = 0,
    horizon: int | None = None,
    runs: int | None = None,
) -> Trajectory:
    """Simulate the plant over horizon K.

    Args:
        model: Plant to simulate, assumed validated.
        inputs: Known inputs u_1..u_{K-1}, one n_u-vector per step.
        faults: Fault signals delta_1..delta_K, or None for the fault-free plant.
        seed: Seed of the named random streams `x1`, `t` and `w`.
        horizon: K. Inferred as `len(inputs) + 1` when omitted.
        runs: Number of independent runs. When given, every array in the
            returned trajectory has a leading axis of this length.

    """
    check_dimensions(model)
    inputs = _as_sequence(inputs, model.n_u, 'inputs')
    horizon = inputs.shape[0] + 1 if horizon is None else int(horizon)

    if horizon < 1:
        raise HorizonMismatch(f'horizon must be at least 1, got {horizon}')
    if inputs.shape[0] != horizon - 1:
        raise HorizonMismatch(
            f'{inputs.shape[0]} inputs given, horizon {horizon} needs {horizon - 1}'
        )

    if faults is None:
        faults = np.zeros((horizon, model.n_delta))
    else:
        faults = _as_sequence(faults, model.n_delta, 'faults')
        if faults.shape[0] != horizon:
            raise HorizonMismatch(
                f'{faults.shape[0]} fault vectors given, horizon is {horizon}'
            )

    batch = () if runs is None else (int(runs),)

    initial_noise = stream(seed, 'x1').standard_normal(batch + (model.n_x,))
    process_noise = stream(seed, 't').standard_normal(
        batch + (horizon - 1, model.n_x)
    )
    sensor_noise = stream(seed, 'w').standard_normal(batch + (horizon, model.n_y))

    process_noise = process_noise @ sqrtm_psd(model.Sigma_t)
    sensor_noise = sensor_noise @ sqrtm_psd(model.Sigma_w)

    states = np.empty(batch + (horizon, model.n_x))
    states[..., 0, :] = model.mu_x1 + initial_noise @ sqrtm_psd(model.Sigma_x1)

    for step in range(horizon - 1):
        states[..., step + 1, :] = (
            states[..., step, :] @ model.A.T
            + inputs[step] @ model.B.T
            + process_noise[..., step, :]
            + faults[step] @ model.G.T
        )

    measurements = states @ model.C.T + sensor_noise + faults @ model.H.T
    private_outputs = states @ model.D.T

    return Trajectory(
        model=model,
        states=states,
        measurements=measurements,
        private_outputs=private_outputs,
        inputs=inputs,
        faults=faults,
    )


def apply_mechanism(
    trajectory: Trajectory,
    Sigma_v_K: ArrayLike,
    Sigma_j_K: ArrayLike,
    seed: int = 0,
) -> DistortedTrajectory:
    """Distort measurements and inputs with stacked Gaussian noise.

    The stacked noises v^K ~ N(0, Sigma_v_K) and j^{K-1} ~ N(0, Sigma_j_K)
    are drawn by colouring standard normals with the symmetric square root of
    each covariance, from the named streams `v` and `j`.

    Args:
        trajectory: Output of `simulate`, single run or batch.
        Sigma_v_K: (K n_y) x (K n_y) covariance of the measurement noise.
        Sigma_j_K: ((K-1) n_u) x ((K-1) n_u) covariance of the input noise.
        seed: Seed of the mechanism streams.

    """
    model = trajectory.model
    horizon = trajectory.horizon
    n_y = trajectory.measurements.shape[-1]
    n_u = trajectory.inputs.shape[-1]
    batch = trajectory.measurements.shape[:-2]

    Sigma_v_K = check_psd(
        np.zeros((0, 0)) if horizon * n_y == 0 else Sigma_v_K,
        'Sigma_v_K',
        horizon * n_y,
    )
    Sigma_j_K = check_psd(
        np.zeros((0, 0)) if (horizon - 1) * n_u == 0 else Sigma_j_K,
        'Sigma_j_K',
        (horizon - 1) * n_u,
    )

    measurement_noise = (
        stream(seed, 'v').standard_normal(batch + (horizon * n_y,))
        @ sqrtm_psd(Sigma_v_K)
    ).reshape(batch + (horizon, n_y))
    input_noise = (
        stream(seed, 'j').standard_normal(batch + ((horizon - 1) * n_u,))
        @ sqrtm_psd(Sigma_j_K)
    ).reshape(batch + (horizon - 1, n_u))

    # x~_k - x_k obeys d_{k+1} = A d_k + B j_k from d_1 = 0.
    offset = np.zeros(batch + (horizon, model.n_x))
    for step in range(horizon - 1):
        offset[..., step + 1, :] = (
            offset[..., step, :] @ model.A.T + input_noise[..., step, :] @ model.B.T
        )

    return DistortedTrajectory(
        base=trajectory,
        measurement_noise=measurement_noise,
        input_noise=input_noise,
        measurements=trajectory.measurements + measurement_noise,
        inputs=trajectory.inputs + input_noise,
        apparent_states=trajectory.states + offset,
    )


def model_from_dict(document: dict[str, Any]) -> SystemModel:
    """Build a `SystemModel` from a mapping with exactly the model field names."""
    missing = [name for name in MODEL_FIELDS if name not in document]
    if missing:
        raise DimensionMismatch(f'Model document is missing fields: {missing}')
    return SystemModel(**{name: document[name] for name in MODEL_FIELDS})


def model_to_dict(model: SystemModel) -> dict[str, Any]:
    """Row-major nested lists for every model field."""
    return {name: serialise_value(getattr(model, name)) for name in MODEL_FIELDS}


def load_model(model_path: str | Path) -> SystemModel:
    """Read a `SystemModel` JSON document."""
    return model_from_dict(read_json_file(model_path))


def save_model(model: SystemModel, model_path: str | Path):
    """Write a `SystemModel` JSON document."""
    write_json_file(model_path, model_to_dict(model))


def reactor_model_path() -> Path:
    """Location of the packaged chemical reactor case study."""
    return Path(str(files('detection_privacy.data').joinpath(REACTOR_MODEL_FILE)))


def load_reactor_model() -> SystemModel:
    """Read the packaged chemical reactor case study."""
    return load_model(reactor_model_path())
