"""Unit tests for the detection_privacy public API.

These tests duplicate unit tests for the individual modules that the functions
are derived from, but demonstrate the imports and re-exports work as
anticipated.

"""

from os.path import join as path_join

import numpy as np
import pytest

import detection_privacy
from detection_privacy import (
    SystemModel,
    assemble,
    beta_star,
    detection_rate_no_privacy,
    emit_result,
    load_reactor_model,
    result_matches_sidecar,
    run_far_sweep,
    solve,
    solve_dare,
    threshold_alpha,
    validate_model,
    verify,
)


def test_all_names_are_exported():
    """Every name in `__all__` is importable from the package."""
    for name in detection_privacy.__all__:
        assert hasattr(detection_privacy, name), name

    assert detection_privacy.__version__ == detection_privacy.__about__.version


def test_reactor_workflow():
    """Load, validate and filter the reactor through the public API."""
    model = load_reactor_model()

    assert isinstance(model, SystemModel)
    assert validate_model(model).passed
    assert solve_dare(model).Sigma_r.shape == (2, 2)


def test_threshold_and_detection_rate(reactor_design):
    """Without a fault the detection rate is the false-alarm target."""
    alpha = threshold_alpha(0.1, 2)

    assert alpha == pytest.approx(4.605170186, abs=1e-8)
    assert detection_rate_no_privacy(
        np.zeros(2), reactor_design.Sigma_r, alpha
    ) == pytest.approx(0.1, abs=1e-8)
    assert beta_star(alpha, 0.1, 0.0, 2) == pytest.approx(1.0)


def test_synthesis_workflow(toy_model):
    """Assemble, solve and verify a small mechanism."""
    problem = assemble(toy_model, 2, 0.1, 0.3, structure='block_diagonal')
    design = solve(problem)

    assert verify(design, problem, samples=20_000).passed


def test_experiment_workflow(tmpdir, small_experiment_config):
    """Run an experiment and check the written table against its sidecar."""
    config = type(small_experiment_config).from_dict(
        {**small_experiment_config.to_dict(), 'epsilons': (0.0,)}
    )
    csv_path = emit_result(run_far_sweep(config), tmpdir)[0]

    assert result_matches_sidecar(csv_path, path_join(tmpdir, 'far_sweep.json'))
