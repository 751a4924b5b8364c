import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence, Tuple

import numpy as np

from battery import BatteryParams, PriceScenario, RewardSeries, TargetSpec

logger = logging.getLogger(__name__)

PENALTY_EDGES = ('capacity', 'band')
PRICE_SAMPLING = ('iid', 'replay')
OPTIMIZERS = ('sgd', 'adam')


class Action(IntEnum):
    DISCHARGE = -1
    IDLE = 0
    CHARGE = 1
    STOP = 2


# Network output order; ties resolve to the lowest position.
ACTIONS = (Action.DISCHARGE, Action.IDLE, Action.CHARGE, Action.STOP)


class InfeasibleAction(ValueError):
    """An action outside the feasibility mask was forced on the environment."""


def action_index(action: Action) -> int:
    return ACTIONS.index(Action(action))


@dataclass(frozen=True)
class BinningSpec:
    lambda_min: float
    lambda_max: float
    n_bins: int

    def __post_init__(self):
        if not self.lambda_max > self.lambda_min:
            raise ValueError(f"lambda_max must exceed lambda_min, got [{self.lambda_min}, {self.lambda_max}]")
        if self.n_bins < 2:
            raise ValueError(f"Need at least 2 price bins, got {self.n_bins}")

    @property
    def delta(self) -> float:
        return (self.lambda_max - self.lambda_min) / self.n_bins

    @classmethod
    def fit(cls, scenarios: Sequence[PriceScenario], n_bins: int) -> 'BinningSpec':
        """Bin edges spanning every price seen in the training scenarios."""
        if not scenarios:
            raise ValueError("Cannot fit price bins without scenarios")
        prices = np.concatenate([s.prices for s in scenarios])
        lo, hi = float(prices.min()), float(prices.max())
        if hi <= lo:
            hi = lo + 1.0
        return cls(lambda_min=lo, lambda_max=hi, n_bins=n_bins)


def bin_price(price: float, spec: BinningSpec) -> int:
    return int(max(0, min(math.floor((price - spec.lambda_min) / spec.delta), spec.n_bins - 1)))


@dataclass(frozen=True)
class MdpState:
    e: float
    p: int
    t: int
    u: bool = False


@dataclass(frozen=True)
class DqnConfig:
    reward: RewardSeries
    gamma: float = 0.99
    learning_rate: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    target_sync_period: int = 500
    episodes: int = 2000
    rho: float = 10.0
    seed: int = 0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    hidden: Tuple[int, ...] = (64, 64)
    n_bins: int = 10
    optimizer: str = 'sgd'
    reward_scale: float = 1.0
    randomize_start: bool = False
    penalty_edges: str = 'capacity'
    price_sampling: str = 'iid'

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ('learning_rate', 'batch_size', 'buffer_capacity', 'target_sync_period',
                     'episodes', 'reward_scale'):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.buffer_capacity <= self.batch_size:
            raise ValueError(
                f"buffer_capacity ({self.buffer_capacity}) must exceed batch_size ({self.batch_size})"
            )
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("Need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0 < self.epsilon_decay_fraction <= 1:
            raise ValueError(f"epsilon_decay_fraction must lie in (0, 1], got {self.epsilon_decay_fraction}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.penalty_edges not in PENALTY_EDGES:
            raise ValueError(f"penalty_edges must be one of {PENALTY_EDGES}, got {self.penalty_edges!r}")
        if self.price_sampling not in PRICE_SAMPLING:
            raise ValueError(f"price_sampling must be one of {PRICE_SAMPLING}, got {self.price_sampling!r}")
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be at least 2, got {self.n_bins}")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ValueError(f"hidden layer sizes must be positive, got {self.hidden}")
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))

    @property
    def horizon(self) -> int:
        return self.reward.horizon

    def epsilon_at(self, episode: int) -> float:
        """Linear annealing over the first epsilon_decay_fraction of the episodes, then flat."""
        decay_episodes = max(1, int(round(self.epsilon_decay_fraction * self.episodes)))
        frac = min(1.0, episode / decay_episodes)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


def soc_levels(params: BatteryParams) -> Tuple[float, ...]:
    """
    Discrete SoC grid below S = floor(e_max): the chains kP and e0 + kP that stay
    inside [0, S). Every level a masked action sequence can reach is on the grid.
    """
    ceiling = math.floor(params.e_max)
    steps = int(ceiling // params.power) + 1
    levels = {round(float(params.e0), 9)}
    for start in (0.0, params.e0):
        for k in range(-steps, steps + 1):
            e = start + k * params.power
            if -1e-9 <= e < ceiling - 1e-9:
                levels.add(round(float(e), 9))
    return tuple(sorted(levels))


def feasible_actions(state: MdpState, params: BatteryParams) -> np.ndarray:
    """
    Boolean mask over ACTIONS. A stopped battery may only idle.

    Charge needs e < S - P with S = floor(e_max). Discharge needs e - P >= 0,
    which is stricter than e > 0: a discharge always moves a full P and the SoC
    may not go negative.
    """
    mask = np.zeros(len(ACTIONS), dtype=bool)
    mask[action_index(Action.IDLE)] = True
    if state.u:
        return mask
    top = math.floor(params.e_max) - params.power
    mask[action_index(Action.CHARGE)] = state.e < top - 1e-9
    mask[action_index(Action.DISCHARGE)] = state.e - params.power >= -1e-9
    mask[action_index(Action.STOP)] = True
    return mask


def terminal_penalty(e: float, params: BatteryParams, target: TargetSpec, rho: float,
                     edges: str = 'capacity') -> float:
    """rho ((e - upper)^2 + (lower - e)^2) when e misses the band, zero otherwise."""
    if target.in_band(e, tol=1e-9):
        return 0.0
    if edges == 'band':
        lower, upper = target.band_lo, target.band_hi
    else:
        lower, upper = params.e_min, params.e_max
    return float(rho * ((e - upper) ** 2 + (lower - e) ** 2))


def stopped_value(e: float, t: int, cfg: DqnConfig, params: BatteryParams, target: TargetSpec) -> float:
    """
    Discounted value of a stopped state at step t: only idling remains and the
    frozen SoC meets the terminal penalty at step T.
    """
    penalty = terminal_penalty(e, params, target, cfg.rho, cfg.penalty_edges)
    return -(cfg.gamma ** (cfg.horizon - t)) * penalty


@dataclass(frozen=True)
class StepOutcome:
    state: MdpState
    reward: float
    done: bool
    arbitrage: float
    stop_reward: float
    penalty: float


def transition(
    state: MdpState,
    action: Action,
    lambda_t: float,
    lambda_next: Optional[float],
    cfg: DqnConfig,
    params: BatteryParams,
    target: TargetSpec,
    binning: BinningSpec,
) -> StepOutcome:
    action = Action(action)
    if not feasible_actions(state, params)[action_index(action)]:
        raise InfeasibleAction(f"{action.name} not allowed in state {state}")

    arbitrage = stop_reward = 0.0
    e, u = state.e, state.u
    if action is Action.DISCHARGE:
        arbitrage = lambda_t * params.power
        e -= params.power
    elif action is Action.CHARGE:
        arbitrage = -lambda_t * params.power
        e += params.power
    elif action is Action.STOP:
        stop_reward = cfg.reward.payout_for_stop(state.t)
        u = True

    done = state.t >= cfg.horizon
    penalty = terminal_penalty(e, params, target, cfg.rho, cfg.penalty_edges) if done else 0.0
    next_bin = bin_price(lambda_next, binning) if lambda_next is not None else state.p
    next_state = MdpState(e=e, p=next_bin, t=min(state.t + 1, cfg.horizon), u=u)
    return StepOutcome(state=next_state, reward=arbitrage + stop_reward - penalty, done=done,
                       arbitrage=arbitrage, stop_reward=stop_reward, penalty=penalty)


def env_step(state, action, lambda_t, lambda_next, cfg, params, target, binning):
    outcome = transition(state, action, lambda_t, lambda_next, cfg, params, target, binning)
    return outcome.state, outcome.reward, outcome.done


class PriceSampler:
    """
    Training price paths: 'iid' draws every hour uniformly from the per-hour
    range seen in training, 'replay' draws whole historical days.
    """

    def __init__(self, scenarios: Sequence[PriceScenario], mode: str = 'iid'):
        if not scenarios:
            raise ValueError("PriceSampler needs at least one scenario")
        if mode not in PRICE_SAMPLING:
            raise ValueError(f"Unknown price sampling mode {mode!r}")
        self.mode = mode
        self.scenarios = tuple(scenarios)
        self.paths = np.array([s.prices for s in scenarios])
        self.hour_min = self.paths.min(axis=0)
        self.hour_max = self.paths.max(axis=0)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.mode == 'replay':
            return self.paths[rng.integers(len(self.paths))].copy()
        return rng.uniform(self.hour_min, self.hour_max)
