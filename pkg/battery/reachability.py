import logging
from typing import Sequence, Tuple

from .models import BatteryParams, TargetSpec

logger = logging.getLogger(__name__)


def reach_interval(e_now: float, steps: int, params: BatteryParams) -> Tuple[float, float]:
    """
    Interval of SoC values reachable after `steps` hours from e_now.

    Bounds are propagated under extreme controls (full charge for the upper
    edge, full discharge for the lower edge) and clamped to [e_min, e_max]
    every step, which is the reachable set of the constrained dynamics.
    """
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    lo = hi = float(e_now)
    for _ in range(steps):
        hi = min(params.e_max, params.eta_self * hi + params.power * params.eta_c)
        lo = max(params.e_min, params.eta_self * lo - params.power / params.eta_d)
    return lo, hi


def intersects(interval: Tuple[float, float], lo: float, hi: float, tol: float = 1e-9) -> bool:
    return interval[0] <= hi + tol and interval[1] >= lo - tol


def point_of_no_return(target: TargetSpec, e_schedule: Sequence[float], params: BatteryParams) -> int:
    """
    Latest hour t <= tau (the last critical hour) from which the SoC band can
    still be reached when starting at e_schedule[t]. Returns 0 when no hour
    qualifies. e_schedule is indexed by hour, e_schedule[0] being e_0.
    """
    if len(e_schedule) == 0:
        raise ValueError("SoC schedule is empty")
    tau = target.critical_hour
    if tau > len(e_schedule) - 1:
        raise ValueError(f"Schedule covers hours 0..{len(e_schedule) - 1}, critical hour is {tau}")

    for t in range(tau, -1, -1):
        reachable = reach_interval(e_schedule[t], tau - t, params)
        if intersects(reachable, target.band_lo, target.band_hi):
            logger.debug(f"Point of no return at t={t} (reach {reachable})")
            return t
    return 0
