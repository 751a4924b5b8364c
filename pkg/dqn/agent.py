import copy
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from battery import BatteryParams, PriceScenario, TargetSpec

from .env import (
    ACTIONS,
    Action,
    BinningSpec,
    DqnConfig,
    MdpState,
    PriceSampler,
    action_index,
    bin_price,
    feasible_actions,
    soc_levels,
    stopped_value,
    transition,
)
from .network import QNetwork, q_forward

logger = logging.getLogger(__name__)

LOSS_LIMIT = 1e9


class TrainingDiverged(RuntimeError):
    """Training loss blew up past the divergence guard."""


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_mask: np.ndarray
    bootstrap: bool
    fixed_next: float


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions, sampled uniformly without replacement."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item: Transition):
        self._items.append(item)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        if batch_size > len(self._items):
            raise ValueError(f"Cannot draw {batch_size} transitions from {len(self._items)}")
        picks = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in picks]


@dataclass
class EpisodeRecord:
    episode: int
    episode_return: float
    loss: float
    epsilon: float


@dataclass
class TrainingLog:
    records: List[EpisodeRecord] = field(default_factory=list)

    def append(self, record: EpisodeRecord):
        self.records.append(record)

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.episode_return for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'episode': [r.episode for r in self.records],
            'return': [r.episode_return for r in self.records],
            'loss': [r.loss for r in self.records],
            'epsilon': [r.epsilon for r in self.records],
        })

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')


@dataclass
class DqnResult:
    network: QNetwork
    log: TrainingLog
    binning: BinningSpec
    levels: Tuple[float, ...]


def select_action(net: QNetwork, state: MdpState, eps: float, feasible: np.ndarray,
                  rng: np.random.Generator) -> Action:
    """Epsilon-greedy over the feasible actions; greedy ties go to the lowest index."""
    allowed = np.flatnonzero(feasible)
    if allowed.size == 0:
        raise ValueError(f"No feasible action in state {state}")
    if eps > 0 and rng.random() < eps:
        return ACTIONS[int(rng.choice(allowed))]
    q = np.where(feasible, q_forward(net, state), -np.inf)
    return ACTIONS[int(np.argmax(q))]


def _make_optimizer(cfg: DqnConfig, net: QNetwork) -> torch.optim.Optimizer:
    if cfg.optimizer == 'adam':
        return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    return torch.optim.SGD(net.parameters(), lr=cfg.learning_rate)


def _gradient_step(net, target_net, optimizer, batch: List[Transition], gamma: float) -> float:
    states = torch.tensor(np.array([b.state for b in batch]), dtype=torch.float64)
    actions = torch.tensor([b.action for b in batch], dtype=torch.int64)
    rewards = torch.tensor([b.reward for b in batch], dtype=torch.float64)
    next_states = torch.tensor(np.array([b.next_state for b in batch]), dtype=torch.float64)
    masks = torch.tensor(np.array([b.next_mask for b in batch]), dtype=torch.bool)
    bootstrap = torch.tensor([b.bootstrap for b in batch], dtype=torch.bool)
    fixed = torch.tensor([b.fixed_next for b in batch], dtype=torch.float64)

    with torch.no_grad():
        next_q = target_net(next_states).masked_fill(~masks, -math.inf).max(dim=1).values
        next_value = torch.where(bootstrap, next_q, fixed)
        y = rewards + gamma * next_value

    q = net(states).gather(1, actions.unsqueeze(1)).squeeze(1)
    loss = F.mse_loss(q, y)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item())


def train_dqn(
    cfg: DqnConfig,
    scenarios: Union[Sequence[PriceScenario], PriceSampler],
    params: BatteryParams,
    target: TargetSpec,
    binning: Optional[BinningSpec] = None,
) -> DqnResult:
    sampler = scenarios if isinstance(scenarios, PriceSampler) else PriceSampler(scenarios, cfg.price_sampling)
    horizon = cfg.horizon
    if sampler.paths.shape[1] != horizon:
        raise ValueError(f"Scenario horizon {sampler.paths.shape[1]} != reward horizon {horizon}")
    binning = binning or BinningSpec.fit(sampler.scenarios, cfg.n_bins)
    levels = soc_levels(params)

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    net = QNetwork(params.e_max, binning.n_bins, horizon, cfg.hidden)
    target_net = copy.deepcopy(net)
    optimizer = _make_optimizer(cfg, net)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    log = TrainingLog()
    grad_steps = 0

    logger.info(
        f"Training DQN: {cfg.episodes} episodes, T={horizon}, {len(levels)} SoC levels, "
        f"{binning.n_bins} price bins, optimizer={cfg.optimizer}"
    )
    for episode in range(cfg.episodes):
        eps = cfg.epsilon_at(episode)
        prices = sampler.sample(rng)
        e0 = float(rng.choice(levels)) if cfg.randomize_start else params.e0
        state = MdpState(e=e0, p=bin_price(prices[0], binning), t=1)
        episode_return = 0.0
        losses = []

        for t in range(1, horizon + 1):
            mask = feasible_actions(state, params)
            action = Action.IDLE if state.u else select_action(net, state, eps, mask, rng)
            lambda_next = prices[t] if t < horizon else None
            out = transition(state, action, prices[t - 1], lambda_next, cfg, params, target, binning)
            episode_return += out.reward

            if not state.u:
                nxt = out.state
                if out.done:
                    bootstrap, fixed = False, 0.0
                elif nxt.u:
                    bootstrap, fixed = False, stopped_value(nxt.e, nxt.t, cfg, params, target)
                else:
                    bootstrap, fixed = True, 0.0
                buffer.push(Transition(
                    state=net.encode([state])[0].numpy(),
                    action=action_index(action),
                    reward=out.reward * cfg.reward_scale,
                    next_state=net.encode([nxt])[0].numpy(),
                    next_mask=feasible_actions(nxt, params),
                    bootstrap=bootstrap,
                    fixed_next=fixed * cfg.reward_scale,
                ))

                if len(buffer) >= cfg.batch_size:
                    loss = _gradient_step(net, target_net, optimizer,
                                          buffer.sample(cfg.batch_size, rng), cfg.gamma)
                    if not math.isfinite(loss) or loss > LOSS_LIMIT:
                        raise TrainingDiverged(f"Loss {loss:.3e} at episode {episode}, step {t}")
                    losses.append(loss)
                    grad_steps += 1
                    if grad_steps % cfg.target_sync_period == 0:
                        target_net.load_state_dict(net.state_dict())

            state = out.state
            if out.done:
                break

        mean_loss = float(np.mean(losses)) if losses else math.nan
        log.append(EpisodeRecord(episode=episode, episode_return=episode_return,
                                 loss=mean_loss, epsilon=eps))
        if (episode + 1) % max(1, cfg.episodes // 10) == 0:
            recent = log.returns[-max(1, cfg.episodes // 10):]
            logger.info(
                f"Episode {episode + 1}/{cfg.episodes}: mean return {recent.mean():.2f}, "
                f"loss {mean_loss:.4g}, epsilon {eps:.3f}"
            )
        else:
            logger.debug(f"Episode {episode}: return {episode_return:.2f}, loss {mean_loss:.4g}")

    return DqnResult(network=net, log=log, binning=binning, levels=levels)
