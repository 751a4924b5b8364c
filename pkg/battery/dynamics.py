import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .models import (
    BatteryParams,
    DispatchPlan,
    LengthMismatch,
    PriceScenario,
    RewardMode,
    RewardSeries,
    TargetSpec,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6


class DomainError(ValueError):
    """Raised for physically meaningless inputs such as negative energy flows."""


def soc_step(e_prev: float, c: float, d: float, params: BatteryParams) -> float:
    """
    One hour of SoC dynamics with c MWh bought and d MWh sold.
    No clamping: keeping e inside [e_min, e_max] is the caller's constraint.
    """
    if c < 0 or d < 0:
        raise DomainError(f"Charge and discharge must be non-negative, got c={c}, d={d}")
    if c > params.power * (1 + 1e-12) or d > params.power * (1 + 1e-12):
        raise DomainError(f"Flows above P={params.power} MWh per step: c={c}, d={d}")
    return params.eta_self * e_prev - d / params.eta_d + c * params.eta_c


def simulate_soc(e0: float, c_mwh, d_mwh, params: BatteryParams) -> np.ndarray:
    """SoC trajectory e_0..e_T obtained by folding soc_step over the flows."""
    c_mwh = np.asarray(c_mwh, dtype=float)
    d_mwh = np.asarray(d_mwh, dtype=float)
    if c_mwh.shape != d_mwh.shape:
        raise LengthMismatch(f"Flow lengths differ: {c_mwh.shape} vs {d_mwh.shape}")
    e = np.empty(len(c_mwh) + 1)
    e[0] = e0
    for t, (c, d) in enumerate(zip(c_mwh, d_mwh)):
        e[t + 1] = soc_step(e[t], min(max(c, 0.0), params.power),
                            min(max(d, 0.0), params.power), params)
    return e


def dynamics_equalities(params: BatteryParams, n: int, c_cols, d_cols, e_cols):
    """
    Rows of e_t - eta_self e_{t-1} - P eta_c c_t + (P / eta_d) d_t = 0 for
    t = 1..T, with c and d as fractions of P. A column index of None marks a
    flow fixed at zero (the battery has stopped). e_0 moves to the right-hand side.
    """
    horizon = len(e_cols)
    A = np.zeros((horizon, n))
    b = np.zeros(horizon)
    for t in range(horizon):
        A[t, e_cols[t]] = 1.0
        if t == 0:
            b[t] = params.eta_self * params.e0
        else:
            A[t, e_cols[t - 1]] = -params.eta_self
        if c_cols[t] is not None:
            A[t, c_cols[t]] = -params.power * params.eta_c
        if d_cols[t] is not None:
            A[t, d_cols[t]] = params.power / params.eta_d
    return A, b


def plan_profit(plan: DispatchPlan, scenario: PriceScenario, params: BatteryParams) -> float:
    """Arbitrage profit of the plan under one realized price path."""
    if plan.horizon != scenario.horizon:
        raise LengthMismatch(
            f"Plan horizon {plan.horizon} != scenario {scenario.id!r} horizon {scenario.horizon}"
        )
    return float(np.dot(scenario.prices, params.power * (plan.d - plan.c)))


def stopping_reward_value(plan: DispatchPlan, reward: RewardSeries) -> float:
    if plan.horizon != reward.horizon:
        raise LengthMismatch(f"Plan horizon {plan.horizon} != reward horizon {reward.horizon}")
    if reward.mode is RewardMode.CUMULATIVE_AFTER_STOP:
        return float(np.dot(reward.values, plan.z))
    transitions = np.diff(np.concatenate(([0.0], plan.z)))
    return float(np.dot(reward.values, transitions))


def deviation_penalty(e_terminal: float, target: TargetSpec, rho: Optional[float] = None) -> float:
    rho = target.rho if rho is None else rho
    return float(rho * (e_terminal - target.e_target) ** 2)


def check_plan(
    plan: DispatchPlan,
    params: BatteryParams,
    tol: float = DEFAULT_TOL,
    target: Optional[TargetSpec] = None,
) -> List[str]:
    """
    Collect every feasibility violation of the plan. An empty list means the
    plan is feasible within tol. Hours in messages are 1-based.
    """
    violations = []
    T = plan.horizon

    for name in ('c', 'd', 'g', 'z'):
        values = getattr(plan, name)
        for t in np.flatnonzero((values < -tol) | (values > 1 + tol)):
            violations.append(f"{name} outside [0, 1] at t={t + 1}")

    for t in range(1, T):
        if plan.z[t] < plan.z[t - 1] - tol:
            violations.append(f"z not monotone at t={t + 1}")

    for t in range(T):
        if plan.c[t] > 1 - plan.z[t] + tol:
            violations.append(f"charge while stopped at t={t + 1}")
        if plan.d[t] > 1 - plan.z[t] + tol:
            violations.append(f"discharge while stopped at t={t + 1}")
        if plan.c[t] + plan.d[t] + plan.g[t] + plan.z[t] > 1 + tol:
            violations.append(f"action balance exceeds 1 at t={t + 1}")

    if abs(plan.e[0] - params.e0) > tol:
        violations.append(f"initial SoC {plan.e[0]} != e0 {params.e0}")

    for t in range(1, T + 1):
        if plan.e[t] > params.e_max + tol:
            violations.append(f"SoC upper bound at t={t}")
        if plan.e[t] < params.e_min - tol:
            violations.append(f"SoC lower bound at t={t}")
        expected = (params.eta_self * plan.e[t - 1]
                    - params.power * plan.d[t - 1] / params.eta_d
                    + params.power * plan.c[t - 1] * params.eta_c)
        if abs(plan.e[t] - expected) > tol * max(1.0, abs(expected)):
            violations.append(f"SoC dynamics mismatch at t={t}")

    if target is not None:
        for hour in target.critical_hours:
            if hour <= T and not target.in_band(plan.e[hour], tol):
                violations.append(f"SoC outside target band at critical hour t={hour}")

    if violations:
        logger.debug(f"Plan has {len(violations)} violations, first: {violations[0]}")
    return violations


@dataclass(frozen=True)
class PlanOutcome:
    """Realized result of one plan on one price path. Profit is net of the model's own penalty."""

    scenario_id: str
    arbitrage: float
    stop_reward: float
    penalty: float
    tau: int
    e_terminal: float

    @property
    def profit(self) -> float:
        return self.arbitrage + self.stop_reward - self.penalty


def score_plan(
    plan: DispatchPlan,
    scenario: PriceScenario,
    reward: RewardSeries,
    params: BatteryParams,
    penalty: float = 0.0,
) -> PlanOutcome:
    return PlanOutcome(
        scenario_id=scenario.id,
        arbitrage=plan_profit(plan, scenario, params),
        stop_reward=stopping_reward_value(plan, reward),
        penalty=float(penalty),
        tau=plan.stopping_time(),
        e_terminal=plan.terminal_soc,
    )
