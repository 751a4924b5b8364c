import copy
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from battery import (
    BatteryParams,
    DispatchPlan,
    PlanOutcome,
    PriceScenario,
    RewardSeries,
    TargetSpec,
    deviation_penalty,
    plan_profit,
    score_plan,
    stopping_reward_value,
)
from dqn import TrainingDiverged
from qp import DegenerateActiveSet

from .conformal import (
    InsufficientCalibration,
    UncertaintyBox,
    conformal_calibrate,
    marginal_coverage,
    min_calibration_samples,
)
from .dispatch import (
    DISPATCH_TOL,
    STOP_THRESHOLD,
    DispatchResult,
    dispatch_layer,
    dispatch_template,
    plan_from_solution,
    robust_dispatch,
)
from .predictor import ARCHITECTURES, PricePredictor

logger = logging.getLogger(__name__)

LOSS_LIMIT = 1e9


@dataclass(frozen=True)
class E2eConfig:
    reward: RewardSeries
    delta: float = 0.05
    rho: float = 10.0
    mu: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    calibration_fraction: float = 0.5
    seed: int = 0
    architecture: str = 'linear'
    hidden: Tuple[int, ...] = (128,)
    recalibrate_per_batch: bool = True

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")
        if not 0 < self.calibration_fraction <= 1:
            raise ValueError(f"calibration_fraction must lie in (0, 1], got {self.calibration_fraction}")
        for name in ('learning_rate', 'epochs', 'batch_size'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))

    @property
    def horizon(self) -> int:
        return self.reward.horizon


def task_loss(plan: DispatchPlan, realized: PriceScenario, reward: RewardSeries, target: TargetSpec,
              rho: float, params: BatteryParams) -> float:
    """Negated realized objective: arbitrage plus stopping reward minus the terminal deviation penalty."""
    return -(plan_profit(plan, realized, params)
             + stopping_reward_value(plan, reward)
             - deviation_penalty(plan.terminal_soc, target, rho))


def sample_task_loss(x: torch.Tensor, prices: torch.Tensor, reward: RewardSeries, target: TargetSpec,
                     rho: float, power: float) -> torch.Tensor:
    """Torch form of task_loss on the raw dispatch vector x = (c, d, g, z, e)."""
    T = len(prices)
    c, d, z, e_T = x[:T], x[T:2 * T], x[3 * T:4 * T], x[5 * T - 1]
    weights = torch.as_tensor(reward.stop_weights(), dtype=x.dtype)
    profit = torch.sum(power * prices * (d - c)) + torch.sum(weights * z)
    return -(profit - rho * (e_T - target.e_target) ** 2)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    coverage: float
    mean_tau: float
    skipped: int


@dataclass
class E2eLog:
    records: List[EpochRecord] = field(default_factory=list)
    initial_loss: float = math.nan
    best_loss: float = math.nan
    best_epoch: int = -1

    def append(self, record: EpochRecord):
        self.records.append(record)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'epoch': [r.epoch for r in self.records],
            'loss': [r.loss for r in self.records],
            'coverage': [r.coverage for r in self.records],
            'mean_tau': [r.mean_tau for r in self.records],
            'skipped': [r.skipped for r in self.records],
        })

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')


def _features(scenarios: Sequence[PriceScenario]) -> np.ndarray:
    missing = [s.id for s in scenarios if s.features is None]
    if missing:
        raise ValueError(f"Scenarios without features: {missing[:5]}")
    dims = {len(s.features) for s in scenarios}
    if len(dims) != 1:
        raise ValueError(f"Feature dimensions differ across scenarios: {sorted(dims)}")
    return np.array([s.features for s in scenarios])


@dataclass
class E2eModel:
    """Trained predictor with its frozen calibrated halfwidth."""

    predictor: PricePredictor
    halfwidth: np.ndarray
    cfg: E2eConfig
    params: BatteryParams
    target: TargetSpec

    def box(self, scenario: PriceScenario) -> UncertaintyBox:
        with torch.no_grad():
            center = self.predictor(torch.as_tensor(scenario.features, dtype=torch.float64)).numpy()
        return UncertaintyBox(center, self.halfwidth, self.cfg.delta)

    def dispatch(self, scenario: PriceScenario, reward: Optional[RewardSeries] = None) -> DispatchResult:
        reward = self.cfg.reward if reward is None else reward
        return robust_dispatch(self.box(scenario), reward, self.params, self.target, self.cfg.mu, self.cfg.rho)

    def evaluate(self, scenarios: Sequence[PriceScenario],
                 reward: Optional[RewardSeries] = None) -> Tuple[List[PlanOutcome], float]:
        """Per-scenario outcomes (penalty = terminal deviation) and marginal coverage of the boxes."""
        reward = self.cfg.reward if reward is None else reward
        outcomes, boxes = [], []
        for scenario in scenarios:
            box = self.box(scenario)
            result = robust_dispatch(box, reward, self.params, self.target, self.cfg.mu, self.cfg.rho)
            penalty = deviation_penalty(result.plan.terminal_soc, self.target, self.cfg.rho)
            outcomes.append(score_plan(result.plan, scenario, reward, self.params, penalty))
            boxes.append(box)
        coverage = marginal_coverage(boxes, scenarios) if scenarios else math.nan
        return outcomes, coverage


class _Calibrator:
    def __init__(self, features: np.ndarray, prices: np.ndarray, delta: float, fraction: float):
        self.features = torch.as_tensor(features)
        self.prices = prices
        self.delta = delta
        n = len(prices)
        need = min_calibration_samples(delta)
        if n < need:
            raise InsufficientCalibration(
                f"{n} calibration scenarios cannot support delta={delta}; need at least {need}"
            )
        self.sample_size = min(n, max(need, int(round(fraction * n))))

    def halfwidth(self, predictor: PricePredictor, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        if rng is None or self.sample_size == len(self.prices):
            idx = np.arange(len(self.prices))
        else:
            idx = np.sort(rng.choice(len(self.prices), size=self.sample_size, replace=False))
        with torch.no_grad():
            centers = predictor(self.features[torch.as_tensor(idx)]).numpy()
        return np.maximum(conformal_calibrate(np.abs(self.prices[idx] - centers), self.delta), 0.0)


def _mean_task_loss(predictor, halfwidth, features, scenarios, cfg, params, target) -> float:
    losses = []
    with torch.no_grad():
        centers = predictor(torch.as_tensor(features)).numpy()
    for center, scenario in zip(centers, scenarios):
        box = UncertaintyBox(center, halfwidth, cfg.delta)
        result = robust_dispatch(box, cfg.reward, params, target, cfg.mu, cfg.rho)
        losses.append(task_loss(result.plan, scenario, cfg.reward, target, cfg.rho, params))
    return float(np.mean(losses))


def train_e2e(cfg: E2eConfig, train: Sequence[PriceScenario], cal: Sequence[PriceScenario],
              params: BatteryParams, target: TargetSpec) -> Tuple[E2eModel, E2eLog]:
    """
    Decision-focused training of the price predictor: centers feed the
    robust dispatch, the realized task loss is back-propagated through
    the dispatch solution, and the checkpoint with the lowest mean
    training task loss (untrained predictor included) is returned.
    """
    if not train:
        raise ValueError("E2E training needs at least one training scenario")
    train_ids = {s.id for s in train}
    overlap = train_ids.intersection(s.id for s in cal)
    if overlap:
        raise ValueError(f"Training and calibration splits share scenarios: {sorted(overlap)[:5]}")

    T = cfg.horizon
    X_train = _features(train)
    X_cal = _features(cal) if cal else np.zeros((0, X_train.shape[1]))
    prices_train = torch.as_tensor(np.array([s.prices for s in train]))
    calibrator = _Calibrator(X_cal, np.array([s.prices for s in cal]).reshape(-1, T), cfg.delta,
                             cfg.calibration_fraction)

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    predictor = PricePredictor(X_train.shape[1], T, cfg.architecture, cfg.hidden)
    optimizer = torch.optim.Adam(predictor.parameters(), lr=cfg.learning_rate)
    template = dispatch_template(T, cfg.reward, params, target, cfg.rho, cfg.mu)
    frozen_q = None if cfg.recalibrate_per_batch else calibrator.halfwidth(predictor)

    def checkpoint_halfwidth():
        return frozen_q if frozen_q is not None else calibrator.halfwidth(predictor)

    log = E2eLog()
    log.initial_loss = _mean_task_loss(predictor, checkpoint_halfwidth(), X_train, train, cfg, params, target)
    best_loss, best_state, best_epoch = log.initial_loss, copy.deepcopy(predictor.state_dict()), -1
    logger.info(f"E2E training: {len(train)} train, {len(cal)} calibration scenarios, "
                f"initial task loss {best_loss:.4f}")

    features = torch.as_tensor(X_train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        losses, taus = [], []
        hits = total = skipped = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            q = frozen_q if frozen_q is not None else calibrator.halfwidth(predictor, rng)
            optimizer.zero_grad()
            used = 0
            for i in batch:
                center = predictor(features[i])
                x = dispatch_layer(center, q, template, T, params.power, DISPATCH_TOL)
                loss = sample_task_loss(x, prices_train[i], cfg.reward, target, cfg.rho, params.power)
                value = float(loss.item())
                if not math.isfinite(value) or abs(value) > LOSS_LIMIT:
                    raise TrainingDiverged(f"Task loss {value:.3e} at epoch {epoch}, scenario {train[i].id!r}")
                try:
                    (loss / len(batch)).backward()
                except DegenerateActiveSet as e:
                    skipped += 1
                    logger.warning(f"Skipping scenario {train[i].id!r} at epoch {epoch}: {e}")
                    continue
                used += 1
                losses.append(value)
                plan = plan_from_solution(x.detach().numpy(), params, T)
                taus.append(plan.stopping_time(STOP_THRESHOLD))
                covered = np.abs(train[i].prices - center.detach().numpy()) <= q
                hits += int(covered.sum())
                total += covered.size
            if used:
                optimizer.step()

        mean_loss = float(np.mean(losses)) if losses else math.nan
        record = EpochRecord(epoch=epoch, loss=mean_loss, coverage=hits / total if total else math.nan,
                             mean_tau=float(np.mean(taus)) if taus else math.nan, skipped=skipped)
        log.append(record)

        epoch_loss = _mean_task_loss(predictor, checkpoint_halfwidth(), X_train, train, cfg, params, target)
        if epoch_loss < best_loss:
            best_loss, best_state, best_epoch = epoch_loss, copy.deepcopy(predictor.state_dict()), epoch
        logger.info(
            f"Epoch {epoch + 1}/{cfg.epochs}: batch loss {mean_loss:.4f}, train task loss {epoch_loss:.4f}, "
            f"coverage {record.coverage:.3f}, mean tau {record.mean_tau:.2f}, skipped {skipped}"
        )

    predictor.load_state_dict(best_state)
    log.best_loss, log.best_epoch = best_loss, best_epoch
    halfwidth = checkpoint_halfwidth()
    logger.info(f"E2E best checkpoint from epoch {best_epoch} with train task loss {best_loss:.4f}")
    return E2eModel(predictor=predictor, halfwidth=halfwidth, cfg=cfg, params=params, target=target), log
