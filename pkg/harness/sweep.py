import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from battery import LengthMismatch, PlanOutcome, PriceScenario
from dqn import BinningSpec, InfeasibleAction, TrainingDiverged, evaluate_policy, extract_policy, train_dqn
from e2e import InsufficientCalibration, save_predictor, train_e2e
from metadata import RunTracker
from qp import DegenerateActiveSet, QpSolverError
from saa import InfeasibleChanceConstraint, SaaSolver, evaluate_plan
from store import ReportStorage

from .config import ConfigError, Settings
from .report import MODELS, CellFailure, EvalReport, EvalRow, c_key

logger = logging.getLogger(__name__)

# Failures of a single (model, c) cell; anything else aborts the sweep.
CELL_ERRORS = (
    QpSolverError,
    InfeasibleChanceConstraint,
    DegenerateActiveSet,
    TrainingDiverged,
    InsufficientCalibration,
    InfeasibleAction,
    LengthMismatch,
    ArithmeticError,
)


@dataclass
class SplitData:
    train: List[PriceScenario]
    cal: List[PriceScenario]
    test: List[PriceScenario]


class SweepRunner:
    """
    Runs every (model, c) cell on one train/calibration/test split and
    evaluates all models on the same ordered test list.
    """

    def __init__(self, settings: Settings, tracker: Optional[RunTracker] = None,
                 artifacts: Optional[ReportStorage] = None):
        self.settings = settings
        self.tracker = tracker
        self.artifacts = artifacts
        self.params = settings.battery_params()
        self.target = settings.target_spec()
        self._saa_solver: Optional[SaaSolver] = None
        self._binning: Optional[BinningSpec] = None

    def validate(self, models: Sequence[str], c_values: Sequence[float], data: SplitData):
        bad = [m for m in models if m not in MODELS]
        if bad:
            raise ConfigError(f"Unknown model(s) {bad}; expected a subset of {MODELS}")
        if not c_values:
            raise ConfigError("c_values must not be empty")
        if not data.test:
            raise ValueError("Test split is empty")
        if not data.train:
            raise ValueError("Training split is empty")
        for c in c_values:
            if 'dqn' in models:
                self.settings.dqn_config(c)
            if 'e2e' in models:
                self.settings.e2e_config(c)

    def run(self, models: Sequence[str], c_values: Sequence[float], data: SplitData) -> EvalReport:
        self.validate(models, c_values, data)
        report = EvalReport()
        cells = len(models) * len(c_values)
        logger.info(
            f"Sweep: models {list(models)}, {len(c_values)} reward levels, "
            f"{len(data.train)} train / {len(data.cal)} calibration / {len(data.test)} test scenarios"
        )
        runners: Dict[str, Callable[[float, SplitData], List[EvalRow]]] = {
            'saa': self.run_saa, 'dqn': self.run_dqn, 'e2e': self.run_e2e,
        }
        done = 0
        for model in models:
            for c in sorted(c_values):
                done += 1
                if self.tracker:
                    self.tracker.increment_attempted()
                try:
                    rows = runners[model](c, data)
                except CELL_ERRORS as e:
                    error_type = type(e).__name__
                    logger.error(f"Cell {model} c={c_key(c)} failed ({error_type}): {e}")
                    report.failures.append(CellFailure(model=model, c=float(c), error_type=error_type,
                                                       message=str(e)))
                    if self.tracker:
                        self.tracker.record_error(error_type)
                    continue
                report.extend(rows)
                if self.tracker:
                    self.tracker.increment_completed()
                    self.tracker.increment_rows(len(rows))
                mean_profit = float(np.mean([r.profit for r in rows]))
                logger.info(f"Cell {done}/{cells}: {model} c={c_key(c)} mean profit {mean_profit:.2f}")
        return report

    def run_saa(self, c: float, data: SplitData) -> List[EvalRow]:
        # LP values do not depend on c, so one solver serves the whole sweep.
        if self._saa_solver is None:
            cfg = self.settings.saa_config(data.train, c)
            self._saa_solver = SaaSolver(cfg, max_workers=self.settings.saa_workers)
        reward = self.settings.reward_series(c)
        solution = self._saa_solver.solve(reward)
        if self.artifacts:
            self.artifacts.write_plan(solution.plan, f"saa_plan_c{c_key(c)}.csv")
        outcomes = evaluate_plan(solution, data.test, reward, self.params)
        return self._rows('saa', c, outcomes)

    def run_dqn(self, c: float, data: SplitData) -> List[EvalRow]:
        cfg = self.settings.dqn_config(c)
        if self._binning is None:
            self._binning = BinningSpec.fit(data.train, cfg.n_bins)
        result = train_dqn(cfg, data.train, self.params, self.target, self._binning)
        policy = extract_policy(result.network, result.binning, cfg.horizon, self.params)
        if self.artifacts:
            policy.to_csv(self.artifacts.artifact_path(f"dqn_policy_c{c_key(c)}.csv"))
            result.log.to_csv(self.artifacts.artifact_path(f"dqn_log_c{c_key(c)}.csv"))
        outcomes = evaluate_policy(policy, data.test, cfg, self.params, self.target)
        return self._rows('dqn', c, outcomes)

    def run_e2e(self, c: float, data: SplitData) -> List[EvalRow]:
        cfg = self.settings.e2e_config(c)
        model, log = train_e2e(cfg, data.train, data.cal, self.params, self.target)
        if self.artifacts:
            save_predictor(model.predictor, self.artifacts.artifact_path(f"e2e_predictor_c{c_key(c)}.bin"))
            log.to_csv(self.artifacts.artifact_path(f"e2e_log_c{c_key(c)}.csv"))
        outcomes, coverage = model.evaluate(data.test)
        logger.debug(f"E2E c={c_key(c)}: marginal coverage {coverage:.4f}")
        per_scenario = [float(model.box(s).covers(s.prices).mean()) for s in data.test]
        return [EvalRow.from_outcome('e2e', c, o, cov) for o, cov in zip(outcomes, per_scenario)]

    @staticmethod
    def _rows(model: str, c: float, outcomes: Sequence[PlanOutcome]) -> List[EvalRow]:
        return [EvalRow.from_outcome(model, c, o) for o in outcomes]


def run_sweep(models: Sequence[str], c_values: Sequence[float], data: SplitData, settings: Settings,
              seed: int, tracker: Optional[RunTracker] = None,
              artifacts: Optional[ReportStorage] = None) -> EvalReport:
    """Sweep with every stochastic component seeded from `seed`."""
    settings = settings.update({'seed': seed})
    return SweepRunner(settings, tracker, artifacts).run(models, c_values, data)
