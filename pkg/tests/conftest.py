import json

import numpy as np
from pytest import fixture

from detection_privacy.estimation import solve_dare
from detection_privacy.experiments import ExperimentConfig
from detection_privacy.model_core import SystemModel, load_reactor_model
from detection_privacy.synthesis import Structure, assemble, solve


def is_json_serialisable(input_object) -> bool:
    """Return if object can be serialised to a JSON object."""
    try:
        json.dumps(input_object)
        return True
    except (TypeError, OverflowError):
        return False


def make_scalar_model(**overrides) -> SystemModel:
    """One-dimensional plant, with any matrix replaced by keyword."""
    matrices = {
        'A': [[0.5]],
        'B': [[1.0]],
        'C': [[1.0]],
        'D': [[1.0]],
        'G': [[0.0]],
        'H': [[1.0]],
        'Sigma_t': [[1.0]],
        'Sigma_w': [[1.0]],
        'mu_x1': [0.0],
        'Sigma_x1': [[1.0]],
    }
    matrices.update(overrides)
    return SystemModel(**matrices)


@fixture(scope='session')
def reactor_model():
    """The packaged chemical reactor case study."""
    return load_reactor_model()


@fixture(scope='session')
def reactor_design(reactor_model):
    """Steady-state Kalman filter of the reactor."""
    return solve_dare(reactor_model)


@fixture(scope='session')
def reactor_published_gain():
    """Steady-state gain of the reactor filter, to four decimal places."""
    return np.array(
        [
            [0.8271, 0.0],
            [0.0, 0.8243],
            [0.0, 0.0002],
            [0.0, 0.0481],
        ]
    )


@fixture()
def scalar_model():
    """Stable scalar plant with unit noise."""
    return make_scalar_model()


@fixture(scope='session')
def toy_model():
    """Scalar plant whose synthesis problem has a closed-form optimum.

    With A = 0 the Kalman gain is zero and Sigma_r = 2, while x_1 and x_2
    are independent standard normals, so the leakage separates per step.

    """
    return make_scalar_model(A=[[0.0]])


@fixture(scope='session')
def toy_problem(toy_model):
    """Block-diagonal K = 2 synthesis for the toy plant at epsilon = 0.3."""
    return assemble(toy_model, 2, 0.1, 0.3, structure=Structure.BLOCK_DIAGONAL)


@fixture(scope='session')
def toy_mechanism(toy_problem):
    """Optimal mechanism of `toy_problem`."""
    return solve(toy_problem)


@fixture(scope='session')
def reactor_problem(reactor_model, reactor_design):
    """Full-structure K = 4 reactor synthesis at epsilon = 0.3."""
    return assemble(reactor_model, 4, 0.1, 0.3, design=reactor_design)


@fixture(scope='session')
def reactor_mechanism(reactor_problem):
    """Optimal mechanism of `reactor_problem`."""
    return solve(reactor_problem)


@fixture()
def small_experiment_config():
    """Experiment settings small enough for unit tests."""
    return ExperimentConfig(
        K=3,
        epsilons=(0.1, 0.3, 0.5),
        deltas=(0.0, 10.0, 80.0),
        detection_epsilons=(0.0, 0.3),
        roc_deltas=(4.0,),
        roc_epsilons=(0.0, 0.5),
        trajectory_epsilons=(0.0, 0.1, 0.9),
        samples=20_000,
    )
