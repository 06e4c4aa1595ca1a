#!/usr/bin/env python3
# tubegrid/run-tubegrid.py
"""
⚡ Tubegrid - tube-based voltage control for meshed AC microgrids
Command-line front end: design, certify, simulate, compare and batch runs.

Exit status: 0 ok, 1 usage/config error, 2 certificate failure, 3 divergence.
"""

import argparse
import logging
import sys

from conductor.config import DEFAULT_CONFIG, GainsSection, load_config, load_gains_file, scenario_names
from conductor.orchestrator import EXIT_USAGE, TubegridOrchestrator, exit_code_for, run_batch
from grid.errors import TubegridError
from tools.log_setup import setup_logging

logger = logging.getLogger(__name__)

COMMANDS = ("design", "certify", "simulate", "compare")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument(
        '--config',
        type=str,
        default=DEFAULT_CONFIG,
        help=f'Scenario file, YAML or JSON (default: {DEFAULT_CONFIG})'
    )
    parser.add_argument(
        '--scenario',
        type=str,
        default=None,
        help='Scenario name inside a scenario library (default: six_node)'
    )
    parser.add_argument(
        '--out-dir',
        type=str,
        default=None,
        help='Output directory (overrides sim.out_dir)'
    )
    parser.add_argument(
        '--seed',
        type=int,
        default=None,
        help='Disturbance seed (overrides sim.seed)'
    )
    parser.add_argument(
        '--dt',
        type=float,
        default=None,
        help='Integration step in seconds (overrides sim.dt)'
    )
    parser.add_argument(
        '--t-end',
        type=float,
        default=None,
        help='Simulation horizon in seconds (overrides sim.t_end)'
    )
    parser.add_argument(
        '--allow-uncertified',
        action='store_true',
        default=None,
        help='Simulate even if the gains fail certification'
    )
    parser.add_argument(
        '--gains',
        type=str,
        default=None,
        metavar='FILE',
        help='Gains file written by the design command (replaces the gains section)'
    )
    parser.add_argument(
        '--verbose',
        action='store_true',
        help='Debug output on the console'
    )


def parse_args(argv=None):
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        description='⚡ Tubegrid - tube-based voltage control toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (
        ('design', 'Design gains from the auto parameters and certify them'),
        ('certify', 'Certify the configured (or --gains) gains'),
        ('simulate', 'Simulate the closed loop and write CSV, reports and plot data'),
        ('compare', 'Compare the reduced model with the full model with line dynamics'),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == 'simulate':
            p.add_argument(
                '--compare',
                action='store_true',
                default=None,
                help='Also run the reduced/full model comparison'
            )

    batch = sub.add_parser('batch', help='Run several scenarios of a library concurrently')
    _add_common(batch)
    batch.add_argument(
        '--scenarios',
        nargs='*',
        default=None,
        help='Scenario names (default: every scenario in the library)'
    )
    batch.add_argument(
        '--run',
        choices=COMMANDS,
        default='simulate',
        help='Command to run for each scenario (default: simulate)'
    )
    batch.add_argument(
        '--workers',
        type=int,
        default=4,
        help='Concurrent scenarios (default: 4)'
    )
    return parser.parse_args(argv)


def _load(args, scenario=None):
    config = load_config(args.config, scenario or args.scenario)
    gains = GainsSection(explicit=load_gains_file(args.gains)) if args.gains else None
    return config.with_overrides(
        out_dir=args.out_dir,
        seed=args.seed,
        dt=args.dt,
        t_end=args.t_end,
        allow_uncertified=args.allow_uncertified,
        compare=getattr(args, 'compare', None),
        gains=gains,
    )


def main(argv=None) -> int:
    """Main entry point"""
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which means certificate failure here
        return EXIT_USAGE if exc.code else 0
    setup_logging(args.out_dir, verbose=args.verbose)

    try:
        if args.command == 'batch':
            names = args.scenarios or scenario_names(args.config)
            if not names:
                logger.error("❌ No scenarios to run; --config must be a scenario library")
                return EXIT_USAGE
            configs = [_load(args, name) for name in names]
            results = run_batch(configs, args.run, args.workers)
            for name, code in results.items():
                logger.info(f"   {name}: exit {code}")
            return max(results.values(), default=0)

        config = _load(args)
        if args.out_dir is None:
            setup_logging(config.sim.out_dir, verbose=args.verbose)
        return TubegridOrchestrator(config).run(args.command)

    except KeyboardInterrupt:
        logger.warning("\n🛑 Run interrupted by user")
        return EXIT_USAGE
    except TubegridError as e:
        logger.error(f"❌ {e}")
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"❌ Run failed: {e}", exc_info=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
