"""Public API for detection-privacy."""

from detection_privacy.__about__ import version
from detection_privacy.detector_metrics import (
    DetectorConfig,
    RocCurve,
    beta_star,
    detection_rate_no_privacy,
    detection_rate_with_privacy,
    false_alarm_rate_analytic,
    fault_residual_mean,
    roc_curve,
    run_detector,
    threshold_alpha,
)
from detection_privacy.estimation import (
    KalmanDesign,
    MmseEstimate,
    ResidualSequence,
    distorted_residual_cov,
    mmse_estimate,
    run_remote_filter,
    solve_dare,
)
from detection_privacy.experiments import (
    ExperimentConfig,
    ExperimentResult,
    emit_result,
    load_config,
    run_cost_vs_epsilon,
    run_detection_and_roc,
    run_far_sweep,
    run_trajectory_comparison,
)
from detection_privacy.lifted_info import (
    JointLaw,
    LiftedSystem,
    build_lifted,
    information_leakage,
    joint_law,
    logconcave_bounds,
    mutual_information,
)
from detection_privacy.model_core import (
    DistortedTrajectory,
    SystemModel,
    Trajectory,
    ValidationReport,
    apply_mechanism,
    load_model,
    load_reactor_model,
    save_model,
    simulate,
    validate_model,
)
from detection_privacy.serialise import result_matches_sidecar
from detection_privacy.special_fn import (
    generalized_chi2_cdf_mc,
    inv_reg_lower_gamma,
    reg_lower_gamma,
    ws_gamma_fit,
)
from detection_privacy.synthesis import (
    MechanismDesign,
    SolverOptions,
    SynthesisProblem,
    assemble,
    load_design,
    save_design,
    solve,
    verify,
)

__version__ = version

__all__ = [
    'DetectorConfig',
    'DistortedTrajectory',
    'ExperimentConfig',
    'ExperimentResult',
    'JointLaw',
    'KalmanDesign',
    'LiftedSystem',
    'MechanismDesign',
    'MmseEstimate',
    'ResidualSequence',
    'RocCurve',
    'SolverOptions',
    'SynthesisProblem',
    'SystemModel',
    'Trajectory',
    'ValidationReport',
    'apply_mechanism',
    'assemble',
    'beta_star',
    'build_lifted',
    'detection_rate_no_privacy',
    'detection_rate_with_privacy',
    'distorted_residual_cov',
    'emit_result',
    'false_alarm_rate_analytic',
    'fault_residual_mean',
    'generalized_chi2_cdf_mc',
    'information_leakage',
    'inv_reg_lower_gamma',
    'joint_law',
    'load_config',
    'load_design',
    'load_model',
    'load_reactor_model',
    'logconcave_bounds',
    'mmse_estimate',
    'mutual_information',
    'reg_lower_gamma',
    'result_matches_sidecar',
    'roc_curve',
    'run_cost_vs_epsilon',
    'run_detection_and_roc',
    'run_detector',
    'run_far_sweep',
    'run_remote_filter',
    'run_trajectory_comparison',
    'save_design',
    'save_model',
    'simulate',
    'solve',
    'solve_dare',
    'threshold_alpha',
    'validate_model',
    'verify',
]
