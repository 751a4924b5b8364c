#!/usr/bin/env python3
"""
Battery arbitrage with a stopping-time reward

Command-line front end: synthetic data, day-level splits, the SAA, DQN and
E2E models, the reward sweep and report regeneration.
"""

import sys
import argparse
import logging
from dataclasses import fields
from pathlib import Path
from typing import List, Optional, Tuple

from battery import LengthMismatch
from dqn import InfeasibleAction, TrainingDiverged
from e2e import InsufficientCalibration
from harness import ConfigError, EvalReport, Settings, SplitData, SweepRunner, run_sweep, table_rows
from ingest import ScenarioDataError, ScenarioTable, load_csv, split, synth_scenarios, write_csv
from metadata import RunTracker
from qp import DegenerateActiveSet, QpSolverError
from saa import InfeasibleChanceConstraint
from store import ReportStorage

VERSION = "1.0.0"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_SOLVER = 4

SOLVER_ERRORS = (QpSolverError, InfeasibleChanceConstraint, DegenerateActiveSet, TrainingDiverged, InfeasibleAction)
# Checked before ValueError, which most of these subclass.
DATA_ERRORS = (ScenarioDataError, LengthMismatch, InsufficientCalibration, FileNotFoundError)

COMMANDS = {
    'synth': 'Write a synthetic scenario CSV',
    'split': 'Split scenarios into train/cal/test CSVs',
    'solve-saa': 'Solve the SAA model on the train split and evaluate on test',
    'train-dqn': 'Train the DQN agent and evaluate its greedy policy on test',
    'train-e2e': 'Train the E2E predictor and evaluate the robust dispatch on test',
    'sweep': 'Run every model over the stopping-reward levels',
    'report': 'Regenerate summary.json and plot CSVs from rows.csv',
}

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger(__name__)


class ArbitrageApp:
    """
    Main orchestrator.
    Resolves data, runs one command and tracks the run in run.json.
    """

    def __init__(self, command: str, settings: Settings, save_artifacts: bool = False):
        self.command = command
        self.settings = settings
        self.save_artifacts = save_artifacts
        self.storage = ReportStorage(settings.out_dir)
        self.tracker = RunTracker(config=settings.snapshot(), version=VERSION,
                                  out_dir=settings.out_dir, command=command)

    def run(self) -> int:
        """Execute the command; returns the process exit code."""
        self.tracker.start_run()
        handler = getattr(self, '_' + self.command.replace('-', '_'))
        try:
            handler()
        except KeyboardInterrupt:
            logger.info("Interrupted by user")
            return self._fail('interrupted', EXIT_FAILED)
        except DATA_ERRORS as e:
            logger.error(f"Data error: {e}")
            return self._fail(type(e).__name__, EXIT_DATA)
        except SOLVER_ERRORS as e:
            logger.error(f"Solver failure: {e}")
            return self._fail(type(e).__name__, EXIT_SOLVER)
        except ValueError as e:
            logger.error(f"Configuration error: {e}")
            return self._fail(type(e).__name__, EXIT_CONFIG)
        except Exception as e:
            logger.error(f"Fatal error: {e}", exc_info=True)
            return self._fail('fatal_error', EXIT_FAILED)

        self.tracker.complete_run(status='completed')
        return EXIT_OK

    def _fail(self, error_type: str, code: int) -> int:
        self.tracker.record_error(error_type)
        self.tracker.complete_run(status='failed')
        return code

    def _table(self) -> ScenarioTable:
        if self.settings.data:
            return load_csv(self.settings.data, self.settings.horizon)
        logger.info("No --data given, using synthetic scenarios")
        return synth_scenarios(self.settings.synth_spec())

    def _split_tables(self) -> Tuple[ScenarioTable, ScenarioTable, ScenarioTable]:
        return split(self._table(), self.settings.fraction_tuple(), self.settings.seed)

    def _split_data(self) -> SplitData:
        train, cal, test = self._split_tables()
        return SplitData(train.to_scenarios(), cal.to_scenarios(), test.to_scenarios())

    def _synth(self):
        table = synth_scenarios(self.settings.synth_spec())
        path = Path(self.settings.data) if self.settings.data else Path(self.settings.out_dir) / 'scenarios.csv'
        write_csv(table, path)

    def _split(self):
        for name, table in zip(('train', 'cal', 'test'), self._split_tables()):
            write_csv(table, Path(self.settings.out_dir) / f"{name}.csv")

    def _single_cell(self, model: str):
        data = self._split_data()
        runner = SweepRunner(self.settings, self.tracker, self.storage)
        self.tracker.increment_attempted()
        rows = {'saa': runner.run_saa, 'dqn': runner.run_dqn, 'e2e': runner.run_e2e}[model](self.settings.c, data)
        self.tracker.increment_completed()
        self.tracker.increment_rows(len(rows))
        self.storage.write_report(EvalReport(rows=rows))

    def _solve_saa(self):
        self._single_cell('saa')

    def _train_dqn(self):
        self._single_cell('dqn')

    def _train_e2e(self):
        self._single_cell('e2e')

    def _sweep(self):
        data = self._split_data()
        artifacts = ReportStorage(Path(self.settings.out_dir) / 'artifacts') if self.save_artifacts else None
        report = run_sweep(self.settings.model_list(), self.settings.c_value_list(), data, self.settings,
                           self.settings.seed, self.tracker, artifacts)
        self.storage.write_report(report)
        self._log_table(report.summary())
        if report.failures:
            logger.warning(f"{len(report.failures)} sweep cells failed, see failures.csv")

    def _report(self):
        rows = self.storage.load_rows()
        self.storage.write_summary(rows)
        self.tracker.increment_rows(len(rows))
        self._log_table(EvalReport(rows=rows).summary())

    @staticmethod
    def _log_table(summary):
        for row in table_rows(summary):
            logger.info(
                f"{row['model']:>4} c={row['c']:g}: profit {row['mean_profit']:.2f}, "
                f"tau {row['mean_tau']:.2f}, stop reward {row['mean_stop_reward']:.2f}"
            )


def _flag(name: str) -> str:
    return '--' + name.replace('_', '-')


def build_parser() -> argparse.ArgumentParser:
    """One subparser per command; every setting key is also a flag."""
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument(
        '--config',
        type=str,
        default=None,
        help='key=value settings file (flags override it)'
    )
    common.add_argument(
        '--verbose',
        action='store_true',
        help='Enable verbose logging'
    )
    defaults = Settings()
    for f in fields(Settings):
        common.add_argument(
            _flag(f.name),
            dest=f.name,
            type=str,
            default=None,
            help=f"(default: {getattr(defaults, f.name)})"
        )

    parser = argparse.ArgumentParser(
        description='Battery arbitrage with a stopping-time reward: SAA, DQN and E2E models',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest='command', required=True)
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, parents=[common], help=help_text, description=help_text, allow_abbrev=False)
        if name == 'sweep':
            cmd.add_argument(
                '--save-artifacts',
                action='store_true',
                help='Keep per-cell plans, policies, predictors and training logs under <out-dir>/artifacts'
            )
    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == 'sweep' and args.seed is None:
        parser.error("--seed is required for sweep")
    return args


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    overrides = {key: getattr(args, key) for key in Settings.keys()}
    try:
        settings = Settings.resolve(args.config, overrides)
        if args.command not in ('synth', 'report'):
            settings.battery_params()
            settings.target_spec()
    except (ConfigError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    app = ArbitrageApp(args.command, settings, save_artifacts=getattr(args, 'save_artifacts', False))
    return app.run()


if __name__ == '__main__':
    sys.exit(main())
