"""Unit tests for the detection_privacy.detector_metrics.py module."""

import math

import numpy as np
import pytest
from scipy import stats

from detection_privacy import synthesis
from detection_privacy.detector_metrics import (
    DetectorConfig,
    RocCurve,
    beta_star,
    detection_rate_no_privacy,
    detection_rate_with_privacy,
    distorted_statistic_draws,
    empirical_alarm_rate,
    false_alarm_rate_analytic,
    fault_residual_mean,
    normalised_residual_eigenvalues,
    roc_curve,
    run_detector,
    threshold_alpha,
)
from detection_privacy.estimation import ResidualSequence, run_remote_filter
from detection_privacy.exceptions import ConfigError, DomainError, NotPD
from detection_privacy.experiments import ExperimentConfig, step_residual_covariances
from detection_privacy.linalg import sqrtm_psd
from detection_privacy.model_core import simulate
from detection_privacy.special_fn import empirical_cdf, ws_gamma_fit

ROC_GRID = np.round(np.arange(0.05, 0.96, 0.05), 2)


def test_threshold_alpha_two_outputs():
    """A target of 0.1 with two outputs gives the chi-squared(2) 0.9 quantile."""
    assert threshold_alpha(0.1, 2) == pytest.approx(4.605170, abs=1e-6)


@pytest.mark.parametrize('n_y', [1, 3, 6])
def test_threshold_alpha_matches_scipy(n_y):
    """The threshold is the (1 - target) chi-squared quantile."""
    assert threshold_alpha(0.05, n_y) == pytest.approx(
        stats.chi2.ppf(0.95, n_y), abs=1e-9
    )


@pytest.mark.parametrize('target_far', [0.0, 1.0, -0.2])
def test_threshold_alpha_domain(target_far):
    """Targets outside (0, 1) are rejected."""
    with pytest.raises(DomainError):
        threshold_alpha(target_far, 2)


@pytest.mark.parametrize('n_y', [1, 2, 4])
@pytest.mark.parametrize('epsilon', [0.05, 0.3, 0.6])
def test_beta_star_matches_chi_squared_quantiles(n_y, epsilon):
    """beta* is the ratio of the nominal and relaxed chi-squared quantiles."""
    alpha = stats.chi2.ppf(0.9, n_y)
    expected = alpha / stats.chi2.ppf(0.9 - epsilon, n_y)

    assert beta_star(alpha, 0.1, epsilon, n_y) == pytest.approx(expected, abs=1e-10)


def test_beta_star_limits():
    """No distortion gives one; a full budget drops the constraint."""
    alpha = stats.chi2.ppf(0.9, 2)

    assert beta_star(alpha, 0.1, 0.0, 2) == pytest.approx(1.0, abs=1e-10)
    assert beta_star(alpha, 0.1, 0.9, 2) == math.inf
    assert beta_star(alpha, 0.1, 0.95, 2) == math.inf


@pytest.mark.parametrize(
    'alpha, target_far, epsilon',
    [(0.0, 0.1, 0.1), (4.6, 0.0, 0.1), (4.6, 0.1, -0.1)],
)
def test_beta_star_domain(alpha, target_far, epsilon):
    """Invalid thresholds, targets and budgets are rejected."""
    with pytest.raises(DomainError):
        beta_star(alpha, target_far, epsilon, 2)


def test_synthesis_uses_the_detector_beta_star():
    """Synthesis and the detector share one beta* implementation."""
    assert synthesis.beta_star is beta_star


def test_budget_edge_is_handled_alike_everywhere():
    """A budget a hair below one is accepted and unconstrained everywhere."""
    epsilon = 0.9 - 5e-13
    config = DetectorConfig(target_far=0.1, epsilon=epsilon, n_y=2)

    assert config.beta_star == math.inf
    assert ExperimentConfig(epsilons=(epsilon,)).epsilons == (epsilon,)


def test_budget_above_one_is_rejected_everywhere():
    """A budget clearly above one is rejected by every validator."""
    epsilon = 0.9 + 1e-9

    with pytest.raises(DomainError):
        DetectorConfig(target_far=0.1, epsilon=epsilon, n_y=2)
    with pytest.raises(ConfigError):
        ExperimentConfig(epsilons=(epsilon,))


def test_detector_config_derives_alpha():
    """The threshold and the scaling limit follow from the rates."""
    config = DetectorConfig(target_far=0.1, epsilon=0.3, n_y=2)

    assert config.alpha == pytest.approx(threshold_alpha(0.1, 2), abs=1e-10)
    assert config.beta_star == pytest.approx(beta_star(config.alpha, 0.1, 0.3, 2))


@pytest.mark.parametrize(
    'target_far, epsilon',
    [(0.1, -0.1), (0.6, 0.5), (1.0, 0.0)],
)
def test_detector_config_rejects_invalid_budget(target_far, epsilon):
    """Negative epsilon or a budget above one is rejected."""
    with pytest.raises(DomainError):
        DetectorConfig(target_far=target_far, epsilon=epsilon, n_y=2)


def test_detector_config_rejects_inconsistent_alpha():
    """An explicit alpha must agree with the target rate."""
    with pytest.raises(DomainError, match='does not match'):
        DetectorConfig(target_far=0.1, epsilon=0.1, n_y=2, alpha=3.0)


def test_run_detector_reports_one_indexed_steps():
    """Alarms are the 1-indexed steps whose distance exceeds alpha."""
    config = DetectorConfig(target_far=0.1, epsilon=0.0, n_y=2)
    residuals = ResidualSequence(
        residuals=np.zeros((5, 2)),
        distances=np.array([0.0, 10.0, 1.0, 20.0, config.alpha]),
    )

    assert run_detector(residuals, config) == [2, 4]


def test_run_detector_rejects_batches():
    """Batched distances must go through the empirical rate instead."""
    config = DetectorConfig(target_far=0.1, epsilon=0.0, n_y=2)
    residuals = ResidualSequence(np.zeros((3, 4, 2)), np.zeros((3, 4)))

    with pytest.raises(DomainError):
        run_detector(residuals, config)


def test_nominal_false_alarm_rate_monte_carlo(reactor_design):
    """Undistorted residual draws trigger alarms at the target rate."""
    alpha = threshold_alpha(0.1, 2)
    draws = distorted_statistic_draws(
        np.zeros(2), reactor_design.Sigma_r, reactor_design.Sigma_r, 1_000_000, 12
    )

    assert empirical_alarm_rate(draws, alpha).probability == pytest.approx(
        0.1, abs=0.002
    )


@pytest.mark.slow
def test_nominal_reactor_run_alarm_fraction(reactor_model, reactor_design):
    """A long fault-free run of the filter alarms about 10% of the time."""
    horizon = 100_000
    inputs = np.zeros((horizon - 1, 1))
    trajectory = simulate(reactor_model, inputs, seed=3)
    residuals = run_remote_filter(
        reactor_model, reactor_design, trajectory.measurements, inputs
    )
    config = DetectorConfig(target_far=0.1, epsilon=0.0, n_y=2)

    alarms = run_detector(residuals, config)

    assert len(alarms) / horizon == pytest.approx(0.1, abs=0.005)


def test_false_alarm_rate_analytic_nominal(reactor_design):
    """Undistorted residuals have exactly the target rate."""
    alpha = threshold_alpha(0.1, 2)
    Sigma_r = reactor_design.Sigma_r

    assert false_alarm_rate_analytic(Sigma_r, Sigma_r, alpha) == pytest.approx(
        0.1, abs=1e-10
    )


@pytest.mark.parametrize('epsilon', [0.05, 0.3, 0.5])
def test_false_alarm_rate_at_scaling_limit(reactor_design, epsilon):
    """Residuals scaled by beta* raise the rate to exactly target + epsilon."""
    alpha = threshold_alpha(0.1, 2)
    scaling = beta_star(alpha, 0.1, epsilon, 2)
    Sigma_r = reactor_design.Sigma_r

    assert false_alarm_rate_analytic(
        scaling * Sigma_r, Sigma_r, alpha
    ) == pytest.approx(0.1 + epsilon, abs=1e-9)


def test_false_alarm_rate_analytic_against_monte_carlo(reactor_design):
    """The gamma fit is within 0.02 of the empirical rate for uneven weights."""
    alpha = threshold_alpha(0.1, 2)
    Sigma_r = reactor_design.Sigma_r
    Sigma_tilde = np.diag([1.6, 2.6])

    analytic = false_alarm_rate_analytic(Sigma_tilde, Sigma_r, alpha)
    draws = distorted_statistic_draws(np.zeros(2), Sigma_tilde, Sigma_r, 200_000, 5)

    assert analytic == pytest.approx(
        empirical_alarm_rate(draws, alpha).probability, abs=0.02
    )


def test_normalised_residual_eigenvalues(reactor_design):
    """Eigenvalues of Sigma_r^{-1} Sigma~ for a scaled covariance."""
    Sigma_r = reactor_design.Sigma_r
    eigenvalues = normalised_residual_eigenvalues(3.0 * Sigma_r, Sigma_r)

    np.testing.assert_allclose(eigenvalues, [3.0, 3.0])

    with pytest.raises(NotPD):
        normalised_residual_eigenvalues(np.zeros((2, 2)), Sigma_r)


def test_detection_rate_no_privacy(reactor_design):
    """The exact rate is a non-central chi-squared tail."""
    alpha = threshold_alpha(0.1, 2)
    Sigma_r = reactor_design.Sigma_r
    mean = np.array([1.0, -2.0])
    noncentrality = float(mean @ np.linalg.solve(Sigma_r, mean))

    assert detection_rate_no_privacy(mean, Sigma_r, alpha) == pytest.approx(
        stats.ncx2.sf(alpha, 2, noncentrality), abs=1e-9
    )
    assert detection_rate_no_privacy(np.zeros(2), Sigma_r, alpha) == pytest.approx(
        0.1, abs=1e-10
    )


def test_detection_rate_with_privacy_reduces_to_exact(reactor_design):
    """With Sigma~ = Sigma_r the Monte Carlo rate matches the exact one."""
    alpha = threshold_alpha(0.1, 2)
    Sigma_r = reactor_design.Sigma_r
    mean = np.array([0.5, 1.5])

    estimate = detection_rate_with_privacy(mean, Sigma_r, Sigma_r, alpha, 200_000, 2)
    exact = detection_rate_no_privacy(mean, Sigma_r, alpha)

    assert abs(estimate.probability - exact) <= 4.0 * estimate.stderr


def test_detection_rate_with_privacy_without_fault(reactor_design):
    """With no fault the distorted rate is the false-alarm rate of Sigma~."""
    alpha = threshold_alpha(0.1, 2)
    Sigma_r = reactor_design.Sigma_r
    Sigma_tilde = 2.0 * Sigma_r

    estimate = detection_rate_with_privacy(
        np.zeros(2), Sigma_tilde, Sigma_r, alpha, 200_000, 6
    )
    expected = false_alarm_rate_analytic(Sigma_tilde, Sigma_r, alpha)

    assert abs(estimate.probability - expected) <= 4.0 * estimate.stderr


@pytest.mark.parametrize('n_y, seed', [(2, 21), (3, 22), (5, 23)])
def test_distorted_statistic_dominates_scaled_chi_squared(n_y, seed):
    """With Sigma' <= beta I, P(z~ <= a) is at least P(beta chi2(n_y) <= a)."""
    generator = np.random.default_rng(seed)
    beta = 1.0 + 3.0 * generator.random()
    factor = generator.standard_normal((n_y, n_y))
    Sigma_r = factor @ factor.T + 0.5 * np.eye(n_y)
    factor = generator.standard_normal((n_y, n_y))
    shape = factor @ factor.T + 0.05 * np.eye(n_y)
    shape *= beta / np.linalg.eigvalsh(shape)[-1]
    root = sqrtm_psd(Sigma_r)
    Sigma_tilde = root @ shape @ root

    assert normalised_residual_eigenvalues(Sigma_tilde, Sigma_r).max() == (
        pytest.approx(beta, rel=1e-9)
    )

    draws = distorted_statistic_draws(
        np.zeros(n_y), Sigma_tilde, Sigma_r, 200_000, seed
    )
    levels = np.linspace(0.02, 0.98, 20)
    for alpha in beta * stats.chi2.ppf(levels, n_y):
        estimate = empirical_cdf(draws, alpha)
        bound = stats.chi2.cdf(alpha / beta, n_y)
        assert estimate.probability >= bound - 4.0 * max(estimate.stderr, 1e-4)


def test_fault_residual_mean_reactor(reactor_model, reactor_design):
    """The residual mean solves the error recursion of a constant fault."""
    fault = fault_residual_mean(reactor_model, reactor_design, 4.0)
    closed_loop = reactor_model.A - reactor_design.L @ reactor_model.C
    forcing = (reactor_model.G - reactor_design.L @ reactor_model.H) @ [4.0]
    steady_error = np.linalg.solve(np.eye(4) - closed_loop, forcing)

    np.testing.assert_allclose(
        fault.steady_state, reactor_model.C @ steady_error + [0.0, 4.0]
    )
    np.testing.assert_allclose(fault.transient[0], [0.0, 4.0])
    assert fault.transient.shape == (60, 2)
    np.testing.assert_allclose(fault.transient[-1], fault.steady_state, atol=0.05)


def test_fault_residual_mean_is_linear(reactor_model, reactor_design):
    """Doubling the fault doubles the residual mean."""
    single = fault_residual_mean(reactor_model, reactor_design, 1.0)
    double = fault_residual_mean(reactor_model, reactor_design, 2.0)

    np.testing.assert_allclose(double.steady_state, 2.0 * single.steady_state)
    np.testing.assert_allclose(double.transient, 2.0 * single.transient)


def test_roc_curve_without_fault_is_diagonal(reactor_design):
    """With no fault the detection rate equals the false-alarm rate."""
    Sigma_r = reactor_design.Sigma_r
    curve = roc_curve(np.zeros(2), Sigma_r, Sigma_r, ROC_GRID, 200_000, 7)

    np.testing.assert_allclose(curve.false_alarm_rates, ROC_GRID, atol=1e-9)
    np.testing.assert_allclose(
        curve.detection_rates, curve.false_alarm_rates, atol=0.005
    )
    assert curve.auc() == pytest.approx(0.5, abs=0.005)
    assert curve.points.shape == (ROC_GRID.size, 2)


def test_roc_curve_empirical_false_alarms(reactor_design):
    """Monte Carlo false-alarm rates agree with the analytic ones."""
    Sigma_r = reactor_design.Sigma_r
    curve = roc_curve(
        np.zeros(2), 2.0 * Sigma_r, Sigma_r, ROC_GRID, 100_000, 9, empirical_far=True
    )
    analytic = [
        false_alarm_rate_analytic(2.0 * Sigma_r, Sigma_r, alpha)
        for alpha in curve.alphas
    ]

    np.testing.assert_allclose(curve.false_alarm_rates, analytic, atol=0.01)


def test_roc_curve_detection_rates_monotone(reactor_design):
    """Reusing draws across thresholds keeps the curve monotone."""
    Sigma_r = reactor_design.Sigma_r
    curve = roc_curve([0.0, 1.0], 1.5 * Sigma_r, Sigma_r, ROC_GRID, 50_000, 1)

    assert np.all(np.diff(curve.detection_rates) >= 0.0)
    assert np.all(np.diff(curve.alphas) < 0.0)


@pytest.mark.parametrize('grid', [[0.0, 0.5], [0.5, 1.0], [0.3, 0.2]])
def test_roc_curve_rejects_bad_grid(reactor_design, grid):
    """The target grid must be strictly increasing inside (0, 1)."""
    Sigma_r = reactor_design.Sigma_r

    with pytest.raises(DomainError):
        roc_curve(np.zeros(2), Sigma_r, Sigma_r, grid, 10_000, 0)


@pytest.mark.slow
def test_auc_increases_with_fault_size(reactor_model, reactor_design):
    """Without privacy larger faults are easier to detect."""
    Sigma_r = reactor_design.Sigma_r
    areas = {
        delta: roc_curve(
            fault_residual_mean(reactor_model, reactor_design, delta).steady_state,
            Sigma_r,
            Sigma_r,
            ROC_GRID,
            200_000,
            11,
        ).auc()
        for delta in (0.1, 1.0, 2.0, 3.0, 4.0)
    }

    assert areas[1.0] < areas[2.0] < areas[3.0] < areas[4.0]
    assert areas[0.1] < areas[4.0]


@pytest.mark.slow
def test_auc_decreases_with_epsilon(reactor_model, reactor_design):
    """Residuals inflated to the budget of a larger epsilon hide the fault."""
    Sigma_r = reactor_design.Sigma_r
    alpha = threshold_alpha(0.1, 2)
    mean = fault_residual_mean(reactor_model, reactor_design, 4.0).steady_state
    curves = {
        epsilon: roc_curve(
            mean,
            beta_star(alpha, 0.1, epsilon, 2) * Sigma_r,
            Sigma_r,
            ROC_GRID,
            200_000,
            11,
        )
        for epsilon in (0.01, 0.3, 0.5)
    }

    assert curves[0.01].auc() > curves[0.3].auc() > curves[0.5].auc()


def test_roc_auc_of_perfect_and_useless_detectors():
    """Area with the corner points added, for two extreme curves."""
    grid = np.array([0.25, 0.5, 0.75])
    useless = RocCurve(grid, grid, grid, grid, np.zeros(3))
    perfect = RocCurve(grid, grid, grid, np.ones(3), np.full(3, 0.01))

    assert useless.auc() == pytest.approx(0.5)
    assert perfect.auc() == pytest.approx(0.875)
    assert perfect.auc_stderr() == pytest.approx(0.01 * 0.75)


@pytest.mark.slow
def test_gamma_fit_of_synthesised_statistic(reactor_problem, reactor_mechanism):
    """The gamma fit is within 0.02 of the distorted statistic in KS distance."""
    Sigma_r = reactor_problem.design.Sigma_r
    for Sigma_tilde in step_residual_covariances(reactor_problem, reactor_mechanism):
        fit = ws_gamma_fit(normalised_residual_eigenvalues(Sigma_tilde, Sigma_r))
        draws = distorted_statistic_draws(
            np.zeros(2), Sigma_tilde, Sigma_r, 100_000, 13
        )

        result = stats.kstest(draws, stats.gamma(fit.shape, scale=fit.scale).cdf)
        assert result.statistic <= 0.02
