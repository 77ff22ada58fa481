"""Command-line entry point `detection-privacy`.

Exit codes: 0 on success, 2 for invalid configuration or command-line
arguments, 3 when a solver fails or a design does not verify.

"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from detection_privacy.__about__ import version
from detection_privacy.estimation import save_kalman_design, solve_dare
from detection_privacy.exceptions import (
    ConfigError,
    LineSearchStall,
    NoConvergence,
    NotConverged,
)
from detection_privacy.experiments import (
    ExperimentConfig,
    emit_result,
    load_config,
    run_cost_vs_epsilon,
    run_detection_and_roc,
    run_far_sweep,
    run_trajectory_comparison,
)
from detection_privacy.model_core import validate_model
from detection_privacy.serialise import serialise_value, write_json_file
from detection_privacy.synthesis import assemble, save_design, solve, verify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

SOLVER_FAILURES = (NotConverged, LineSearchStall, NoConvergence, ArithmeticError)

# Which configuration fields the grid flags set for each experiment.
EPSILON_GRID_FIELDS = {
    'sweep-cost': 'epsilons',
    'sweep-far': 'epsilons',
    'detection': 'detection_epsilons',
    'roc': 'roc_epsilons',
    'trajectory': 'trajectory_epsilons',
}
DELTA_GRID_FIELDS = {
    'detection': 'deltas',
    'roc': 'roc_deltas',
}


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(item) for item in text.split(',') if item.strip())
    except ValueError as exception:
        raise argparse.ArgumentTypeError(
            f'expected comma-separated numbers, got {text!r}'
        ) from exception


def _count(text: str) -> int:
    """Integer that may be written in exponent notation, e.g. 1e5."""
    try:
        value = float(text)
    except ValueError as exception:
        raise argparse.ArgumentTypeError(
            f'expected a count, got {text!r}'
        ) from exception
    if value != int(value):
        raise argparse.ArgumentTypeError(f'expected a whole number, got {text!r}')
    return int(value)


def build_parser() -> argparse.ArgumentParser:
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument(
        '--model', help='Model JSON file (default: packaged reactor case study).'
    )
    options.add_argument('--config', help='Experiment configuration JSON file.')
    options.add_argument('--K', type=int, help='Horizon.')
    options.add_argument('--far', type=float, help='Target false-alarm rate.')
    options.add_argument('--eps', type=float, help='Single distortion level.')
    options.add_argument(
        '--eps-grid', type=_float_list, help='Comma-separated distortion levels.'
    )
    options.add_argument(
        '--delta', type=_float_list, help='Comma-separated fault magnitudes.'
    )
    options.add_argument('--samples', type=_count, help='Monte Carlo samples.')
    options.add_argument('--seed', type=int, help='Seed of every random stream.')
    options.add_argument(
        '--structure',
        choices=['full', 'block'],
        help='Dense or per-step block-diagonal mechanism covariances.',
    )
    options.add_argument('--out', help='Output directory.')
    options.add_argument(
        '--margin', type=float, help='Closing margin of the detection constraints.'
    )
    options.add_argument(
        '--cap', type=float, help='Cap on covariances left unbounded by constraints.'
    )
    options.add_argument('--workers', type=int, help='Worker threads.')
    options.add_argument(
        '--log-level',
        default='WARNING',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging level (default: WARNING).',
    )

    parser = argparse.ArgumentParser(
        prog='detection-privacy',
        description=(
            'Synthesise Gaussian privacy mechanisms under a false-alarm budget '
            'and evaluate the chi-squared detector they leave behind.'
        ),
    )
    parser.add_argument('--version', action='version', version=version)
    subparsers = parser.add_subparsers(dest='command', required=True)

    for name, description in (
        ('validate', 'Check the standing assumptions on a model.'),
        ('dare', 'Solve the steady-state Kalman filter.'),
        ('synthesize', 'Synthesise and verify one mechanism.'),
        ('sweep-cost', 'Optimal leakage against epsilon.'),
        ('sweep-far', 'False-alarm rate against epsilon.'),
        ('detection', 'Detection rate against fault magnitude.'),
        ('roc', 'ROC curves per fault magnitude and epsilon.'),
        ('trajectory', 'Disclosed data and adversary estimates on a trajectory.'),
    ):
        subparsers.add_parser(name, parents=[options], help=description)

    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        'model_path': args.model,
        'K': args.K,
        'target_far': args.far,
        'samples': args.samples,
        'seed': args.seed,
        'structure': args.structure,
        'margin': args.margin,
        'cap': args.cap,
        'workers': args.workers,
        'out_dir': args.out,
    }

    epsilon_field = EPSILON_GRID_FIELDS.get(args.command)
    if epsilon_field is not None:
        if args.eps_grid is not None:
            overrides[epsilon_field] = args.eps_grid
        elif args.eps is not None:
            overrides[epsilon_field] = (args.eps,)

    delta_field = DELTA_GRID_FIELDS.get(args.command)
    if delta_field is not None and args.delta is not None:
        overrides[delta_field] = args.delta

    return load_config(args.config, **overrides)


def _print_json(document: dict):
    print(json.dumps(serialise_value(document), indent=2, sort_keys=True))


def _validate(config: ExperimentConfig) -> int:
    report = validate_model(config.load_model())
    _print_json(report.to_dict())
    return EXIT_OK if report.passed else EXIT_CONFIG


def _dare(config: ExperimentConfig, write_output: bool) -> int:
    design = solve_dare(config.load_model())
    _print_json(design.to_dict())
    if write_output:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_kalman_design(design, out_dir / 'kalman_design.json')
    return EXIT_OK


def _synthesize(config: ExperimentConfig, epsilon: float | None) -> int:
    if epsilon is None:
        raise ConfigError('synthesize needs --eps')

    problem = assemble(
        config.load_model(),
        config.K,
        config.target_far,
        epsilon,
        structure=config.structure,
        margin=config.margin,
    )
    design = solve(problem, config.solver_options())
    report = verify(
        design,
        problem,
        samples=config.samples,
        seed=config.seed,
        workers=config.workers,
    )

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_design(design, out_dir / 'mechanism.json')
    write_json_file(out_dir / 'verification.json', report.to_dict())

    print(
        f'cost={design.cost:.10g} nats, min margin={design.min_margin:.3e}, '
        f'worst false-alarm rate={report.worst_false_alarm_rate:.4f}, '
        f'verification {"passed" if report.passed else "FAILED"}'
    )
    return EXIT_OK if report.passed else EXIT_SOLVER


def _run_experiment(command: str, config: ExperimentConfig) -> int:
    if command == 'sweep-cost':
        result = run_cost_vs_epsilon(config)
    elif command == 'sweep-far':
        result = run_far_sweep(config)
    elif command == 'detection':
        result = run_detection_and_roc(config, with_roc=False)
    elif command == 'roc':
        result = run_detection_and_roc(config, with_detection=False)
    else:
        result = run_trajectory_comparison(config)

    for csv_path in emit_result(result, config.out_dir):
        print(csv_path)
    return EXIT_OK


def cli_main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return exit_request.code if isinstance(exit_request.code, int) else EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    try:
        config = _config_from_args(args)
        if args.command == 'validate':
            return _validate(config)
        if args.command == 'dare':
            return _dare(config, write_output=args.out is not None)
        if args.command == 'synthesize':
            return _synthesize(config, args.eps)
        return _run_experiment(args.command, config)
    except SOLVER_FAILURES as exception:
        logger.error('Solver failure: %s', exception)
        print(f'error: {exception}', file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as exception:
        logger.error('Configuration error: %s', exception)
        print(f'error: {exception}', file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(cli_main())


if __name__ == '__main__':
    main()
