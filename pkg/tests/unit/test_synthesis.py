"""Unit tests for the detection_privacy.synthesis.py module."""

import math
from dataclasses import replace
from os.path import join as path_join

import numpy as np
import pytest

from detection_privacy.detector_metrics import normalised_residual_eigenvalues
from detection_privacy.exceptions import (
    ConfigError,
    InfeasibleConfig,
    UnsupportedHorizon,
)
from detection_privacy.experiments import step_residual_covariances
from detection_privacy.synthesis import (
    SolverOptions,
    Structure,
    assemble,
    load_design,
    save_design,
    solve,
    verify,
)
from tests.conftest import is_json_serialisable, make_scalar_model


def _toy_cost(v_1: float, j_1: float, v_2: float) -> float:
    """Leakage of the toy plant for per-step variances."""
    return (
        0.5 * math.log((2.0 + v_1) / (1.0 + v_1))
        + 0.5 * math.log((2.0 + v_2) / (1.0 + v_2))
        - 0.5 * math.log(2.0 * math.pi * math.e * j_1)
    )


def test_assemble_reactor(reactor_problem):
    """Assembly records the threshold, scaling and precomputed covariances."""
    assert reactor_problem.K == 4
    assert reactor_problem.structure is Structure.FULL
    assert reactor_problem.constrained
    assert reactor_problem.alpha == pytest.approx(4.605170186, abs=1e-8)
    assert reactor_problem.beta_star == pytest.approx(
        4.605170186 / (-2.0 * math.log(0.4)), abs=1e-8
    )
    assert reactor_problem.margin == pytest.approx(
        1e-8 * np.linalg.norm(reactor_problem.design.Sigma_r, 2)
    )
    assert reactor_problem.Sigma_s.shape == (4, 4)
    assert reactor_problem.Sigma_sy.shape == (4, 8)
    assert reactor_problem.Sigma_y_base.shape == (8, 8)
    assert not reactor_problem.input_noise_unbounded


def test_assemble_rejects_invalid_model():
    """A model that fails its assumption checks cannot be assembled."""
    with pytest.raises(ConfigError, match='Sigma_w_positive_definite'):
        assemble(make_scalar_model(Sigma_w=[[0.0]]), 2, 0.1, 0.3)


@pytest.mark.parametrize(
    'K, structure',
    [(0, Structure.FULL), (16, Structure.FULL), (0, Structure.BLOCK_DIAGONAL)],
)
def test_assemble_unsupported_horizon(scalar_model, K, structure):
    """Empty horizons, and dense horizons beyond 15, are rejected."""
    with pytest.raises(UnsupportedHorizon):
        assemble(scalar_model, K, 0.1, 0.3, structure=structure)


def test_assemble_long_block_diagonal_horizon(scalar_model):
    """Block-diagonal problems are not limited to short horizons."""
    problem = assemble(scalar_model, 30, 0.1, 0.3, structure='block_diagonal')

    assert problem.structure is Structure.BLOCK_DIAGONAL
    assert problem.Sigma_y_base.shape == (30, 30)


def test_assemble_zero_epsilon_is_infeasible(scalar_model):
    """Without a distortion budget there is no room left for noise."""
    with pytest.raises(InfeasibleConfig):
        assemble(scalar_model, 2, 0.1, 0.0)


def test_assemble_unconstrained(scalar_model):
    """A budget reaching one drops the detection constraint."""
    problem = assemble(scalar_model, 2, 0.1, 0.9)

    assert not problem.constrained
    assert problem.input_noise_unbounded


def test_toy_solution_matches_closed_form(toy_problem, toy_mechanism):
    """The toy optimum has v_2 = R, v_1 = sqrt(2 + R) - 2 and j_1 = R - v_1."""
    budget = 2.0 * (toy_problem.beta_star - 1.0) - toy_problem.margin
    v_1 = math.sqrt(2.0 + budget) - 2.0

    np.testing.assert_allclose(
        toy_mechanism.Sigma_v_K, np.diag([v_1, budget]), atol=1e-3
    )
    np.testing.assert_allclose(toy_mechanism.Sigma_j_K, [[budget - v_1]], atol=1e-3)
    assert toy_mechanism.cost == pytest.approx(
        _toy_cost(v_1, budget - v_1, budget), abs=1e-5
    )
    assert toy_mechanism.solve_status == 'optimal'


def test_toy_solution_beats_grid_search(toy_problem, toy_mechanism):
    """No point of a 400 x 400 grid over (v_1, j_1) does better."""
    budget = 2.0 * (toy_problem.beta_star - 1.0) - toy_problem.margin
    axis = np.linspace(budget / 400.0, budget, 400)
    v_1, j_1 = np.meshgrid(axis, axis, indexing='ij')
    feasible = v_1 + j_1 <= budget

    grid_costs = np.where(
        feasible,
        0.5 * np.log((2.0 + v_1) / (1.0 + v_1))
        + 0.5 * math.log((2.0 + budget) / (1.0 + budget))
        - 0.5 * np.log(2.0 * math.pi * math.e * j_1),
        np.inf,
    )
    boundary_costs = [_toy_cost(v, budget - v, budget) for v in axis[:-1]]

    assert grid_costs.min() >= toy_mechanism.cost - 1e-6
    assert min(boundary_costs) == pytest.approx(toy_mechanism.cost, abs=1e-3)


def test_toy_design_is_block_diagonal(toy_mechanism):
    """Block-diagonal synthesis leaves off-diagonal blocks at exactly zero."""
    assert toy_mechanism.Sigma_v_K[0, 1] == 0.0
    assert toy_mechanism.Sigma_v_K[1, 0] == 0.0
    assert toy_mechanism.metadata['structure'] == 'block_diagonal'


def test_reactor_design_respects_constraints(reactor_problem, reactor_mechanism):
    """Every step keeps the detector statistic below beta* times chi-squared."""
    assert reactor_mechanism.min_margin >= 0.0
    assert reactor_mechanism.constraint_margins.shape == (4,)
    assert abs(reactor_mechanism.schur_gap) < 1e-4

    Sigma_r = reactor_problem.design.Sigma_r
    for Sigma_tilde in step_residual_covariances(reactor_problem, reactor_mechanism):
        eigenvalues = normalised_residual_eigenvalues(Sigma_tilde, Sigma_r)
        assert eigenvalues.max() <= reactor_problem.beta_star + 1e-9


def test_reactor_design_stage_objectives(reactor_mechanism):
    """The objective does not increase from one barrier stage to the next."""
    stages = reactor_mechanism.stage_objectives

    assert len(stages) == reactor_mechanism.outer_iterations
    assert all(
        later <= earlier + 1e-8 * max(1.0, abs(earlier))
        for earlier, later in zip(stages, stages[1:])
    )
    assert reactor_mechanism.objective == pytest.approx(stages[-1])


def test_verify_reactor_design(reactor_problem, reactor_mechanism):
    """The synthesised design passes independent verification."""
    report = verify(reactor_mechanism, reactor_problem, samples=100_000, seed=2)

    assert report.passed, report.failures
    assert report.cost_error <= 1e-6
    assert report.worst_false_alarm_rate <= 0.4 + 0.02
    assert report.false_alarm_bound == pytest.approx(0.4)
    assert is_json_serialisable(report.to_dict())


def test_verify_flags_tampered_design(reactor_problem, reactor_mechanism):
    """Inflating the measurement noise breaks the detection constraint."""
    tampered = replace(reactor_mechanism, Sigma_v_K=10.0 * reactor_mechanism.Sigma_v_K)
    report = verify(tampered, reactor_problem, samples=20_000, seed=2)

    assert not report.passed
    assert any('detection constraint' in failure for failure in report.failures)
    assert any('cost differs' in failure for failure in report.failures)


@pytest.mark.slow
def test_cost_decreases_with_epsilon(reactor_model, reactor_design):
    """A larger distortion budget never leaks more."""
    costs = [
        solve(assemble(reactor_model, 3, 0.1, epsilon, design=reactor_design)).cost
        for epsilon in (0.1, 0.3, 0.5)
    ]

    assert costs[0] > costs[1] > costs[2]


@pytest.mark.slow
def test_full_structure_leaks_no_more_than_block(reactor_model, reactor_design):
    """Dense covariances contain the block-diagonal ones as a special case."""
    full = solve(assemble(reactor_model, 3, 0.1, 0.3, design=reactor_design))
    block = solve(
        assemble(
            reactor_model,
            3,
            0.1,
            0.3,
            structure=Structure.BLOCK_DIAGONAL,
            design=reactor_design,
        )
    )

    assert full.cost <= block.cost + 1e-6


def test_unconstrained_design_uses_cap(scalar_model):
    """Without a detection constraint the noise grows to the cap."""
    problem = assemble(scalar_model, 2, 0.1, 0.9)
    design = solve(problem, SolverOptions(cap=100.0))

    assert np.all(np.isinf(design.constraint_margins))
    assert np.linalg.eigvalsh(design.Sigma_v_K).max() <= 100.0
    assert np.linalg.eigvalsh(design.Sigma_v_K).min() > 90.0
    assert design.metadata['capped']


def test_rank_deficient_input_coupling_uses_cap():
    """Input noise outside the range of (C B)^T is held by the cap."""
    model = make_scalar_model(
        A=[[0.5, 0.0], [0.0, 0.5]],
        B=[[1.0, 0.0], [0.0, 1.0]],
        C=[[1.0, 0.0]],
        D=[[1.0, 0.0]],
        G=[[0.0], [0.0]],
        H=[[0.0]],
        Sigma_t=[[1.0, 0.0], [0.0, 1.0]],
        Sigma_w=[[1.0]],
        mu_x1=[0.0, 0.0],
        Sigma_x1=[[1.0, 0.0], [0.0, 1.0]],
    )
    problem = assemble(model, 3, 0.05, 0.3, structure='block_diagonal')

    assert problem.constrained
    assert problem.input_noise_unbounded

    design = solve(problem, SolverOptions(cap=100.0))

    assert design.metadata['capped']
    assert np.all(design.constraint_margins >= 0.0)
    assert np.linalg.eigvalsh(design.Sigma_j_K).max() <= 100.0 * (1.0 + 1e-9)
    # the second input never reaches the measurements
    assert design.Sigma_j_K[1, 1] > 90.0
    assert design.Sigma_j_K[3, 3] > 90.0


def test_full_rank_input_coupling_is_not_capped(scalar_model):
    """A constrained plant with invertible C B needs no input noise cap."""
    problem = assemble(scalar_model, 2, 0.1, 0.3)

    assert problem.constrained
    assert not problem.input_noise_unbounded


def test_save_and_load_design(tmpdir, toy_mechanism):
    """A saved design reads back with the same covariances and cost."""
    design_path = path_join(tmpdir, 'mechanism.json')
    save_design(toy_mechanism, design_path)
    loaded = load_design(design_path)

    np.testing.assert_allclose(loaded.Sigma_v_K, toy_mechanism.Sigma_v_K)
    np.testing.assert_allclose(loaded.Sigma_j_K, toy_mechanism.Sigma_j_K)
    np.testing.assert_allclose(loaded.Pi_K, toy_mechanism.Pi_K)
    assert loaded.cost == toy_mechanism.cost
    assert loaded.metadata == toy_mechanism.metadata
    assert loaded.stage_objectives == toy_mechanism.stage_objectives
