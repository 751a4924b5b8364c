from .solver import (
    InfeasibleChanceConstraint,
    LpOutcome,
    SaaConfig,
    SaaSolution,
    SaaSolver,
    assemble_lp_for_tau,
    band_reachable,
    chance_indicator_check,
    evaluate_plan,
    required_scenarios,
    solve_saa,
)

__all__ = [
    'InfeasibleChanceConstraint', 'LpOutcome', 'SaaConfig', 'SaaSolution', 'SaaSolver',
    'assemble_lp_for_tau', 'band_reachable', 'chance_indicator_check', 'evaluate_plan',
    'required_scenarios', 'solve_saa',
]
