import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import torch

from battery import (
    BatteryParams,
    DispatchPlan,
    LengthMismatch,
    RewardSeries,
    TargetSpec,
    dynamics_equalities,
)
from qp import QpLayer, QpSolution, QpSpec, diff_solution_wrt_f, require_optimal

from .conformal import UncertaintyBox

logger = logging.getLogger(__name__)

DISPATCH_TOL = 1e-7
STOP_THRESHOLD = 0.5


@dataclass
class DispatchResult:
    plan: DispatchPlan
    objective: float
    regularized_objective: float
    spec: QpSpec
    solution: QpSolution
    tau: int


def _blocks(horizon: int):
    """Column ranges of c, d, g, z and e in the dispatch variable vector."""
    return tuple(np.arange(k * horizon, (k + 1) * horizon) for k in range(5))


def dispatch_template(horizon: int, reward: RewardSeries, params: BatteryParams,
                      target: TargetSpec, rho: float, mu: float) -> QpSpec:
    """
    Feasible set and quadratic part of the robust dispatch, with the
    price-dependent linear cost left at zero.

    Minimizes the negated objective over x = (c, d, g, z, e): the stop
    levels are monotone, c + d + g + z = 1, flows are non-negative and
    the SoC stays within capacity. Bounds implied by these rows are not
    repeated. (mu / 2) regularizes c, d and z; the terminal deviation adds
    rho (e_T - e_target)^2 up to a constant.
    """
    if reward.horizon != horizon:
        raise LengthMismatch(f"Reward horizon {reward.horizon} != dispatch horizon {horizon}")
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    c, d, g, z, e = _blocks(horizon)
    n = 5 * horizon

    balance = np.zeros((horizon, n))
    for t in range(horizon):
        balance[t, [c[t], d[t], g[t], z[t]]] = 1.0
    A_dyn, b_dyn = dynamics_equalities(params, n, list(c), list(d), list(e))

    rows, rhs = [], []

    def row(entries, bound):
        r = np.zeros(n)
        for col, coef in entries:
            r[col] = coef
        rows.append(r)
        rhs.append(bound)

    row([(z[0], -1.0)], 0.0)
    for t in range(1, horizon):
        row([(z[t - 1], 1.0), (z[t], -1.0)], 0.0)
    for block in (c, d, g):
        for col in block:
            row([(col, -1.0)], 0.0)
    for col in e:
        row([(col, 1.0)], params.e_max)
        row([(col, -1.0)], -params.e_min)

    H = np.zeros((n, n))
    for block in (c, d, z):
        H[block, block] = mu
    H[e[-1], e[-1]] = 2.0 * rho

    f = np.zeros(n)
    f[z] = -reward.stop_weights()
    f[e[-1]] = -2.0 * rho * target.e_target
    return QpSpec(H=H, f=f, A_eq=np.vstack((balance, A_dyn)), b_eq=np.concatenate((np.ones(horizon), b_dyn)),
                  A_in=np.array(rows), b_in=np.array(rhs))


def price_cost(center, halfwidth, template: QpSpec, horizon: int, power: float):
    """
    Full linear cost: the template's price-free part plus P(center + q) on
    charge and -P(center - q) on discharge. Works on numpy arrays and on
    torch tensors, so gradients can flow from the cost back to the center.
    """
    c, d, _, _, _ = _blocks(horizon)
    if isinstance(center, torch.Tensor):
        halfwidth = torch.as_tensor(halfwidth, dtype=center.dtype)
        f = torch.as_tensor(template.f, dtype=center.dtype).clone()
        f = f.index_add(0, torch.as_tensor(c), power * (center + halfwidth))
        return f.index_add(0, torch.as_tensor(d), -power * (center - halfwidth))
    f = template.f.copy()
    f[c] += power * (np.asarray(center) + np.asarray(halfwidth))
    f[d] -= power * (np.asarray(center) - np.asarray(halfwidth))
    return f


def plan_from_solution(x: np.ndarray, params: BatteryParams, horizon: int, meta=None) -> DispatchPlan:
    c, d, g, z, e = _blocks(horizon)
    x = np.asarray(x, dtype=float)
    return DispatchPlan(
        c=np.clip(x[c], 0.0, 1.0), d=np.clip(x[d], 0.0, 1.0), g=np.clip(x[g], 0.0, 1.0),
        z=np.clip(x[z], 0.0, 1.0), e=np.concatenate(([params.e0], x[e])), meta=meta or {},
    )


def robust_objective(x: np.ndarray, box: UncertaintyBox, reward: RewardSeries, params: BatteryParams,
                     target: TargetSpec, rho: float) -> float:
    """Worst-case objective over the box, without the regularization term."""
    c, d, _, z, e = _blocks(box.horizon)
    P = params.power
    return float(
        np.dot(box.center, P * (x[d] - x[c]))
        - np.dot(box.halfwidth, P * (x[d] + x[c]))
        + np.dot(reward.stop_weights(), x[z])
        - rho * (x[e[-1]] - target.e_target) ** 2
    )


def robust_dispatch(box: UncertaintyBox, reward: RewardSeries, params: BatteryParams,
                    target: TargetSpec, mu: float, rho: Optional[float] = None, tol: float = DISPATCH_TOL) -> DispatchResult:
    rho = target.rho if rho is None else rho
    T = box.horizon
    template = dispatch_template(T, reward, params, target, rho, mu)
    spec = replace(template, f=price_cost(box.center, box.halfwidth, template, T, params.power))
    solution = require_optimal(spec, tol=tol, context='robust dispatch')
    plan = plan_from_solution(solution.x, params, T, meta={'model': 'e2e'})
    objective = robust_objective(solution.x, box, reward, params, target, rho)
    c, d, _, z, _ = _blocks(T)
    reg = 0.5 * mu * float(np.sum(solution.x[c] ** 2) + np.sum(solution.x[d] ** 2) + np.sum(solution.x[z] ** 2))
    tau = plan.stopping_time(STOP_THRESHOLD)
    logger.debug(f"Robust dispatch: objective {objective:.4f}, tau={tau}, {solution.iterations} iterations")
    return DispatchResult(plan=plan, objective=objective, regularized_objective=objective - reg,
                          spec=spec, solution=solution, tau=tau)


def nominal_dispatch(center, reward: RewardSeries, params: BatteryParams, target: TargetSpec,
                     mu: float, rho: Optional[float] = None, tol: float = DISPATCH_TOL) -> DispatchResult:
    center = np.asarray(center, dtype=float)
    return robust_dispatch(UncertaintyBox(center, np.zeros_like(center)), reward, params, target, mu, rho, tol)


def backward_through_dispatch(result: DispatchResult, grad_x: np.ndarray, power: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of a scalar loss with respect to the box center and halfwidth,
    given dL/dx at the dispatch solution.
    """
    T = result.plan.horizon
    grad_f = diff_solution_wrt_f(result.spec, result.solution, grad_x)
    c, d, _, _, _ = _blocks(T)
    return power * (grad_f[c] - grad_f[d]), power * (grad_f[c] + grad_f[d])


def dispatch_layer(center: torch.Tensor, halfwidth, template: QpSpec, horizon: int, power: float,
                   tol: float = DISPATCH_TOL) -> torch.Tensor:
    """Differentiable dispatch: the solution x as a torch function of the center prices."""
    f = price_cost(center, halfwidth, template, horizon, power)
    return QpLayer.apply(f, template, tol)


def task_loss_grad(plan: DispatchPlan, prices, reward: RewardSeries, target: TargetSpec,
                   rho: float, power: float) -> np.ndarray:
    """dL/dx of the task loss at a dispatch plan, in dispatch variable order."""
    T = plan.horizon
    c, d, _, z, e = _blocks(T)
    prices = np.asarray(prices, dtype=float)
    grad = np.zeros(5 * T)
    grad[c] = power * prices
    grad[d] = -power * prices
    grad[z] = -reward.stop_weights()
    grad[e[-1]] = 2.0 * rho * (plan.terminal_soc - target.e_target)
    return grad
