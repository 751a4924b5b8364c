import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from battery import (
    BatteryParams,
    DispatchPlan,
    LengthMismatch,
    PlanOutcome,
    PriceScenario,
    RewardSeries,
    TargetSpec,
    dynamics_equalities,
    intersects,
    reach_interval,
    score_plan,
)
from qp import QpSolverError, QpSpec, QpStatus, solve_qp

logger = logging.getLogger(__name__)

LP_TOL = 1e-7
TIE_TOL = 1e-6


class InfeasibleChanceConstraint(RuntimeError):
    """No stopping time lets the terminal SoC reach the target band."""


@dataclass(frozen=True)
class SaaConfig:
    scenarios: Tuple[PriceScenario, ...]
    epsilon: float
    reward: RewardSeries
    params: BatteryParams
    target: TargetSpec

    def __post_init__(self):
        scenarios = tuple(self.scenarios)
        object.__setattr__(self, 'scenarios', scenarios)
        if not scenarios:
            raise ValueError("SAA needs at least one scenario")
        horizon = scenarios[0].horizon
        for s in scenarios:
            if s.horizon != horizon:
                raise LengthMismatch(f"Scenario {s.id!r} has horizon {s.horizon}, expected {horizon}")
        if self.reward.horizon != horizon:
            raise LengthMismatch(f"Reward horizon {self.reward.horizon} != scenario horizon {horizon}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        self.target.validate_for(self.params, horizon)

    @property
    def horizon(self) -> int:
        return self.scenarios[0].horizon

    @property
    def n_scenarios(self) -> int:
        return len(self.scenarios)

    @property
    def mean_prices(self) -> np.ndarray:
        return np.mean([s.prices for s in self.scenarios], axis=0)

    @property
    def required_scenarios(self) -> int:
        return required_scenarios(self.epsilon, self.n_scenarios)

    @property
    def band_enforced(self) -> bool:
        return self.required_scenarios >= 1


@dataclass
class SaaSolution:
    plan: DispatchPlan
    tau: int
    objective: float
    arbitrage_part: float
    reward_part: float
    w: np.ndarray
    feasible: bool
    band_enforced: bool
    required_scenarios: int
    objectives_by_tau: Dict[int, Optional[float]] = field(default_factory=dict)


@dataclass(frozen=True)
class LpOutcome:
    tau: int
    value: float
    plan: DispatchPlan


def required_scenarios(epsilon: float, n_scenarios: int) -> int:
    return max(0, math.ceil((1 - epsilon) * n_scenarios - 1e-12))


def chance_indicator_check(
    e_T: Union[float, Sequence[float]],
    target: TargetSpec,
    K: int,
    epsilon: Optional[float] = None,
    tol: float = 1e-6,
) -> Tuple[np.ndarray, bool]:
    """
    Scenario indicators for the terminal band. Decisions are shared by all
    scenarios, so every w_k takes the same value. e_T may hold one SoC per
    critical hour; all of them must lie in the band.
    """
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    epsilon = target.epsilon if epsilon is None else epsilon
    in_band = all(target.in_band(float(e), tol) for e in np.atleast_1d(e_T))
    w = np.full(K, 1.0 if in_band else 0.0)
    return w, bool(w.mean() >= 1 - epsilon - 1e-12)


def _columns(horizon: int, tau: int):
    """Column slices of the LP for stopping time tau: flows exist only before tau."""
    active = tau - 1
    c = list(range(0, active))
    d = list(range(active, 2 * active))
    g = list(range(2 * active, 3 * active))
    e = list(range(3 * active, 3 * active + horizon))
    return c, d, g, e


def assemble_lp_for_tau(cfg: SaaConfig, tau: int) -> QpSpec:
    """
    Linear program over (c, d, g, e) with the stop pattern z_t = 1 for t >= tau.
    Flows after the stop are fixed at zero and dropped from the variable vector.
    """
    T = cfg.horizon
    if not 1 <= tau <= T + 1:
        raise ValueError(f"tau must lie in 1..{T + 1}, got {tau}")
    params = cfg.params
    active = tau - 1
    c_cols, d_cols, g_cols, e_cols = _columns(T, tau)
    n = 3 * active + T

    prices = cfg.mean_prices
    f = np.zeros(n)
    f[c_cols] = params.power * prices[:active]
    f[d_cols] = -params.power * prices[:active]

    balance = np.zeros((active, n))
    for t in range(active):
        balance[t, [c_cols[t], d_cols[t], g_cols[t]]] = 1.0
    pad = [None] * (T - active)
    A_dyn, b_dyn = dynamics_equalities(params, n, c_cols + pad, d_cols + pad, e_cols)
    A_eq = np.vstack((balance, A_dyn))
    b_eq = np.concatenate((np.ones(active), b_dyn))

    rows, rhs = [], []
    for col in c_cols + d_cols + g_cols:
        row = np.zeros(n)
        row[col] = -1.0
        rows.append(row)
        rhs.append(0.0)
    for col in e_cols:
        upper = np.zeros(n)
        upper[col] = 1.0
        rows.extend((upper, -upper))
        rhs.extend((params.e_max, -params.e_min))
    if cfg.band_enforced:
        for hour in cfg.target.critical_hours:
            upper = np.zeros(n)
            upper[e_cols[hour - 1]] = 1.0
            rows.extend((upper, -upper))
            rhs.extend((cfg.target.band_hi, -cfg.target.band_lo))

    return QpSpec(H=np.zeros((n, n)), f=f, A_eq=A_eq, b_eq=b_eq,
                  A_in=np.array(rows).reshape(-1, n), b_in=np.array(rhs))


def band_reachable(cfg: SaaConfig, tau: int) -> bool:
    """
    Whether every critical hour can still meet the band when trading stops at
    tau. After the stop the SoC only decays by eta_self per hour.
    """
    if not cfg.band_enforced:
        return True
    params, target = cfg.params, cfg.target
    for hour in target.critical_hours:
        if hour < tau:
            interval = reach_interval(params.e0, hour, params)
        else:
            lo, hi = reach_interval(params.e0, tau - 1, params)
            decay = params.eta_self ** (hour - tau + 1)
            interval = (lo * decay, hi * decay)
        if not intersects(interval, target.band_lo, target.band_hi):
            return False
    return True


def _plan_from_lp(cfg: SaaConfig, tau: int, x: np.ndarray) -> DispatchPlan:
    T = cfg.horizon
    active = tau - 1
    c_cols, d_cols, g_cols, e_cols = _columns(T, tau)
    c, d, g = np.zeros(T), np.zeros(T), np.zeros(T)
    c[:active] = np.clip(x[c_cols], 0.0, 1.0)
    d[:active] = np.clip(x[d_cols], 0.0, 1.0)
    g[:active] = np.clip(x[g_cols], 0.0, 1.0)
    z = (np.arange(1, T + 1) >= tau).astype(float)
    e = np.concatenate(([cfg.params.e0], x[e_cols]))
    return DispatchPlan(c=c, d=d, g=g, z=z, e=e, meta={'model': 'saa', 'tau': tau})


class SaaSolver:
    """
    Exact SAA solve by enumerating the T+1 stopping patterns. LP values do not
    depend on the stopping reward, so they are cached and shared by every
    reward series passed to solve().
    """

    def __init__(self, cfg: SaaConfig, tol: float = LP_TOL, max_workers: int = 1):
        self.cfg = cfg
        self.tol = tol
        self.max_workers = max_workers
        self._lp_cache: Dict[int, Optional[LpOutcome]] = {}

    def lp_outcome(self, tau: int) -> Optional[LpOutcome]:
        if tau not in self._lp_cache:
            self._lp_cache[tau] = self._solve_lp(tau)
        return self._lp_cache[tau]

    def _solve_lp(self, tau: int) -> Optional[LpOutcome]:
        if not band_reachable(self.cfg, tau):
            logger.debug(f"tau={tau}: band unreachable, skipped")
            return None
        spec = assemble_lp_for_tau(self.cfg, tau)
        solution = solve_qp(spec, tol=self.tol)
        if not solution.optimal:
            logger.debug(f"tau={tau}: LP {solution.status.value} after {solution.iterations} iterations")
            return None
        plan = _plan_from_lp(self.cfg, tau, solution.x)
        value = float(np.dot(self.cfg.mean_prices, self.cfg.params.power * (plan.d - plan.c)))
        logger.debug(f"tau={tau}: LP value {value:.6f}")
        return LpOutcome(tau=tau, value=value, plan=plan)

    def prepare(self):
        """Solve every missing LP, in parallel when max_workers > 1."""
        taus = [t for t in range(1, self.cfg.horizon + 2) if t not in self._lp_cache]
        if not taus:
            return
        logger.info(f"Solving {len(taus)} stopping-time LPs")
        if self.max_workers > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                outcomes = list(executor.map(self._solve_lp, taus))
        else:
            outcomes = [self._solve_lp(t) for t in taus]
        for tau, outcome in zip(taus, outcomes):
            self._lp_cache[tau] = outcome

    def lp_values(self) -> Dict[int, Optional[float]]:
        self.prepare()
        return {tau: (None if out is None else out.value) for tau, out in sorted(self._lp_cache.items())}

    def solve(self, reward: Optional[RewardSeries] = None) -> SaaSolution:
        cfg = self.cfg
        reward = cfg.reward if reward is None else reward
        if reward.horizon != cfg.horizon:
            raise LengthMismatch(f"Reward horizon {reward.horizon} != {cfg.horizon}")
        self.prepare()

        objectives: Dict[int, Optional[float]] = {}
        for tau in range(1, cfg.horizon + 2):
            outcome = self._lp_cache[tau]
            objectives[tau] = None if outcome is None else outcome.value + reward.payout_for_stop(tau)

        feasible_taus = [t for t, v in objectives.items() if v is not None]
        if not feasible_taus:
            if cfg.band_enforced:
                raise InfeasibleChanceConstraint(
                    f"No stopping time reaches band [{cfg.target.band_lo}, {cfg.target.band_hi}] "
                    f"at hours {list(cfg.target.critical_hours)}"
                )
            raise QpSolverError("No stopping time admits a feasible dispatch", QpStatus.INFEASIBLE)

        best = max(objectives[t] for t in feasible_taus)
        tau = max(t for t in feasible_taus if objectives[t] >= best - TIE_TOL)
        outcome = self._lp_cache[tau]
        plan = outcome.plan

        soc_at_critical = [plan.e[h] for h in cfg.target.critical_hours]
        w, feasible = chance_indicator_check(soc_at_critical, cfg.target, cfg.n_scenarios, cfg.epsilon)
        reward_part = reward.payout_for_stop(tau)

        logger.info(
            f"SAA optimum: tau={tau}, objective={objectives[tau]:.4f} "
            f"(arbitrage {outcome.value:.4f}, reward {reward_part:.4f}), e_T={plan.terminal_soc:.4f}"
        )
        return SaaSolution(
            plan=plan,
            tau=tau,
            objective=outcome.value + reward_part,
            arbitrage_part=outcome.value,
            reward_part=reward_part,
            w=w,
            feasible=feasible,
            band_enforced=cfg.band_enforced,
            required_scenarios=cfg.required_scenarios,
            objectives_by_tau=objectives,
        )


def solve_saa(cfg: SaaConfig, max_workers: int = 1) -> SaaSolution:
    return SaaSolver(cfg, max_workers=max_workers).solve()


def evaluate_plan(
    solution: Union[SaaSolution, DispatchPlan],
    scenarios: Sequence[PriceScenario],
    reward: RewardSeries,
    params: BatteryParams,
) -> List[PlanOutcome]:
    """Realized outcome of the fixed SAA plan on every scenario; the plan carries no penalty."""
    plan = solution.plan if isinstance(solution, SaaSolution) else solution
    return [score_plan(plan, s, reward, params) for s in scenarios]
