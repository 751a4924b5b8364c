import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from battery import BatteryParams, PlanOutcome, PriceScenario, TargetSpec

from .env import (
    ACTIONS,
    Action,
    BinningSpec,
    DqnConfig,
    MdpState,
    bin_price,
    feasible_actions,
    soc_levels,
    transition,
)
from .network import QNetwork

logger = logging.getLogger(__name__)


@dataclass
class PolicyTable:
    """Greedy action for every (SoC level, price bin, step) of a battery that has not stopped."""

    levels: Tuple[float, ...]
    binning: BinningSpec
    horizon: int
    actions: np.ndarray

    def __post_init__(self):
        expected = (len(self.levels), self.binning.n_bins, self.horizon)
        self.actions = np.asarray(self.actions, dtype=int)
        if self.actions.shape != expected:
            raise ValueError(f"Policy table shape {self.actions.shape} != {expected}")

    def level_index(self, e: float) -> int:
        idx = int(np.argmin(np.abs(np.asarray(self.levels) - e)))
        if abs(self.levels[idx] - e) > 1e-6:
            raise KeyError(f"SoC {e} is not a policy level {self.levels}")
        return idx

    def lookup(self, e: float, p: int, t: int) -> Action:
        return Action(int(self.actions[self.level_index(e), p, t - 1]))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, e in enumerate(self.levels):
            for p in range(self.binning.n_bins):
                for t in range(1, self.horizon + 1):
                    rows.append((e, p, t, int(self.actions[i, p, t - 1])))
        return pd.DataFrame(rows, columns=['e', 'p', 't', 'action'])

    def to_csv(self, path):
        frame = self.to_frame()
        with open(path, 'w', newline='') as f:
            f.write(f"# lambda_min={self.binning.lambda_min!r} lambda_max={self.binning.lambda_max!r} "
                    f"n_bins={self.binning.n_bins}\n")
            frame.to_csv(f, index=False, float_format='%.17g')

    @classmethod
    def from_csv(cls, path) -> 'PolicyTable':
        with open(path) as f:
            header = f.readline().lstrip('#').split()
        meta = dict(item.split('=', 1) for item in header)
        binning = BinningSpec(float(meta['lambda_min']), float(meta['lambda_max']), int(meta['n_bins']))
        frame = pd.read_csv(path, comment='#', float_precision='round_trip')
        levels = tuple(sorted(frame['e'].unique()))
        horizon = int(frame['t'].max())
        actions = np.zeros((len(levels), binning.n_bins, horizon), dtype=int)
        index = {e: i for i, e in enumerate(levels)}
        for e, p, t, a in frame[['e', 'p', 't', 'action']].itertuples(index=False):
            actions[index[e], int(p), int(t) - 1] = int(a)
        return cls(levels=levels, binning=binning, horizon=horizon, actions=actions)


def extract_policy(net: QNetwork, binning: BinningSpec, horizon: int, params: BatteryParams) -> PolicyTable:
    """Tabulate the masked greedy action over the whole discrete state grid."""
    levels = soc_levels(params)
    states = [MdpState(e=e, p=p, t=t)
              for e in levels for p in range(binning.n_bins) for t in range(1, horizon + 1)]
    with torch.no_grad():
        q = net(net.encode(states)).numpy()
    masks = np.array([feasible_actions(s, params) for s in states])
    best = np.argmax(np.where(masks, q, -np.inf), axis=1)
    values = np.array([int(ACTIONS[i]) for i in best])
    return PolicyTable(levels=levels, binning=binning, horizon=horizon,
                       actions=values.reshape(len(levels), binning.n_bins, horizon))


def rollout(policy: PolicyTable, prices: np.ndarray, cfg: DqnConfig, params: BatteryParams,
            target: TargetSpec, e0: Optional[float] = None) -> Tuple[float, float, float, int, float]:
    """Deterministic episode; returns (arbitrage, stop reward, penalty, tau, terminal SoC)."""
    horizon = policy.horizon
    state = MdpState(e=params.e0 if e0 is None else e0, p=bin_price(prices[0], policy.binning), t=1)
    arbitrage = stop_reward = penalty = 0.0
    tau = horizon + 1
    for t in range(1, horizon + 1):
        action = Action.IDLE if state.u else policy.lookup(state.e, state.p, t)
        if action is Action.STOP:
            tau = t
        lambda_next = prices[t] if t < horizon else None
        out = transition(state, action, prices[t - 1], lambda_next, cfg, params, target, policy.binning)
        arbitrage += out.arbitrage
        stop_reward += out.stop_reward
        penalty += out.penalty
        state = out.state
    return arbitrage, stop_reward, penalty, tau, state.e


def evaluate_policy(
    policy: PolicyTable,
    scenarios: Sequence[PriceScenario],
    cfg: DqnConfig,
    params: BatteryParams,
    target: TargetSpec,
) -> List[PlanOutcome]:
    outcomes = []
    for scenario in scenarios:
        if scenario.horizon != policy.horizon:
            raise ValueError(f"Scenario {scenario.id!r} horizon {scenario.horizon} != policy {policy.horizon}")
        arbitrage, stop_reward, penalty, tau, e_T = rollout(policy, scenario.prices, cfg, params, target)
        outcomes.append(PlanOutcome(scenario_id=scenario.id, arbitrage=arbitrage, stop_reward=stop_reward,
                                    penalty=penalty, tau=tau, e_terminal=e_T))
    logger.debug(f"Evaluated DQN policy on {len(outcomes)} scenarios")
    return outcomes
