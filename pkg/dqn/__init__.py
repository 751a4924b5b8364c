from .env import (
    ACTIONS,
    Action,
    BinningSpec,
    DqnConfig,
    InfeasibleAction,
    MdpState,
    PriceSampler,
    StepOutcome,
    action_index,
    bin_price,
    env_step,
    feasible_actions,
    soc_levels,
    stopped_value,
    terminal_penalty,
    transition,
)
from .network import QNetwork, q_forward
from .agent import (
    DqnResult,
    EpisodeRecord,
    ReplayBuffer,
    TrainingDiverged,
    TrainingLog,
    Transition,
    select_action,
    train_dqn,
)
from .policy import PolicyTable, evaluate_policy, extract_policy, rollout

__all__ = [
    'ACTIONS', 'Action', 'BinningSpec', 'DqnConfig', 'InfeasibleAction', 'MdpState', 'PriceSampler',
    'StepOutcome', 'action_index', 'bin_price', 'env_step', 'feasible_actions', 'soc_levels',
    'stopped_value', 'terminal_penalty', 'transition',
    'QNetwork', 'q_forward',
    'DqnResult', 'EpisodeRecord', 'ReplayBuffer', 'TrainingDiverged', 'TrainingLog', 'Transition',
    'select_action', 'train_dqn',
    'PolicyTable', 'evaluate_policy', 'extract_policy', 'rollout',
]
