from .models import (
    BatteryParams,
    DispatchPlan,
    LengthMismatch,
    PriceScenario,
    RewardMode,
    RewardSeries,
    TargetSpec,
    case_study_params,
    case_study_target,
)
from .dynamics import (
    DomainError,
    PlanOutcome,
    check_plan,
    deviation_penalty,
    dynamics_equalities,
    plan_profit,
    score_plan,
    simulate_soc,
    soc_step,
    stopping_reward_value,
)
from .reachability import intersects, point_of_no_return, reach_interval

__all__ = [
    'BatteryParams', 'DispatchPlan', 'LengthMismatch', 'PriceScenario', 'RewardMode',
    'RewardSeries', 'TargetSpec', 'case_study_params', 'case_study_target',
    'DomainError', 'check_plan', 'deviation_penalty', 'dynamics_equalities', 'PlanOutcome', 'plan_profit',
    'score_plan', 'simulate_soc',
    'soc_step', 'stopping_reward_value',
    'intersects', 'point_of_no_return', 'reach_interval',
]
