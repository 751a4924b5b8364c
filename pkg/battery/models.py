from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np


class LengthMismatch(ValueError):
    """Raised when two series that must share a horizon do not."""


@dataclass(frozen=True)
class BatteryParams:
    """
    Physical storage model with hourly steps, so power in MW is
    interchangeable with MWh per step.
    """

    e_min: float
    e_max: float
    power: float
    eta_c: float
    eta_d: float
    eta_self: float
    e0: float

    def __post_init__(self):
        if not 0 <= self.e_min < self.e_max:
            raise ValueError(f"Need 0 <= e_min < e_max, got [{self.e_min}, {self.e_max}]")
        for name in ('eta_c', 'eta_d', 'eta_self'):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
        if self.power <= 0:
            raise ValueError(f"power must be positive, got {self.power}")
        if not self.e_min <= self.e0 <= self.e_max:
            raise ValueError(f"e0={self.e0} outside [{self.e_min}, {self.e_max}]")


@dataclass(frozen=True)
class TargetSpec:
    """SoC band required at the critical hours, plus the deviation penalty."""

    band_lo: float
    band_hi: float
    e_target: float
    rho: float
    epsilon: float
    critical_hours: Tuple[int, ...]

    def __post_init__(self):
        if not self.band_lo <= self.e_target <= self.band_hi:
            raise ValueError(
                f"e_target={self.e_target} outside band [{self.band_lo}, {self.band_hi}]"
            )
        if self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if not self.critical_hours:
            raise ValueError("critical_hours must not be empty")
        object.__setattr__(self, 'critical_hours', tuple(sorted(int(h) for h in self.critical_hours)))

    def validate_for(self, params: BatteryParams, horizon: int):
        """Check the band against the battery limits and the hours against the horizon."""
        if not params.e_min <= self.band_lo <= self.band_hi <= params.e_max:
            raise ValueError(
                f"Band [{self.band_lo}, {self.band_hi}] outside capacity "
                f"[{params.e_min}, {params.e_max}]"
            )
        bad = [h for h in self.critical_hours if not 1 <= h <= horizon]
        if bad:
            raise ValueError(f"Critical hours {bad} outside 1..{horizon}")

    @property
    def critical_hour(self) -> int:
        return max(self.critical_hours)

    def in_band(self, e: float, tol: float = 1e-6) -> bool:
        return self.band_lo - tol <= e <= self.band_hi + tol


class RewardMode(Enum):
    CUMULATIVE_AFTER_STOP = 'cumulative'
    ONCE_AT_STOP = 'once'


@dataclass(frozen=True)
class RewardSeries:
    """Stopping-time reward r_t per step and how it is paid out."""

    values: np.ndarray
    mode: RewardMode = RewardMode.CUMULATIVE_AFTER_STOP

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError("Reward values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'mode', RewardMode(self.mode))

    @classmethod
    def constant(cls, c: float, horizon: int, mode=RewardMode.CUMULATIVE_AFTER_STOP) -> 'RewardSeries':
        return cls(np.full(horizon, float(c)), RewardMode(mode))

    @property
    def horizon(self) -> int:
        return len(self.values)

    def stop_weights(self) -> np.ndarray:
        """
        Linear coefficients on the stop levels z_1..z_T.

        Cumulative payout is sum(r_t z_t). The once-only payout
        sum(r_t (z_t - z_{t-1})) telescopes to sum((r_t - r_{t+1}) z_t) with r_{T+1} = 0.
        """
        if self.mode is RewardMode.CUMULATIVE_AFTER_STOP:
            return self.values.copy()
        return self.values - np.append(self.values[1:], 0.0)

    def payout_for_stop(self, tau: int) -> float:
        """Reward collected by a binary plan that stops at tau (T+1 = never)."""
        if tau > self.horizon:
            return 0.0
        if self.mode is RewardMode.CUMULATIVE_AFTER_STOP:
            return float(self.values[tau - 1:].sum())
        return float(self.values[tau - 1])


@dataclass(frozen=True)
class PriceScenario:
    prices: np.ndarray
    features: Optional[np.ndarray] = None
    id: str = ''

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float).reshape(-1)
        if not np.all(np.isfinite(prices)):
            raise ValueError(f"Scenario {self.id!r} has non-finite prices")
        object.__setattr__(self, 'prices', prices)
        if self.features is not None:
            object.__setattr__(self, 'features', np.asarray(self.features, dtype=float).reshape(-1))

    @property
    def horizon(self) -> int:
        return len(self.prices)


@dataclass
class DispatchPlan:
    """
    Charge, discharge, idle and stop levels as fractions of P, with the SoC
    trajectory e_0..e_T in MWh.
    """

    c: np.ndarray
    d: np.ndarray
    g: np.ndarray
    z: np.ndarray
    e: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ('c', 'd', 'g', 'z', 'e'):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        horizon = len(self.c)
        if any(len(getattr(self, name)) != horizon for name in ('d', 'g', 'z')):
            raise LengthMismatch("c, d, g and z must share the horizon")
        if len(self.e) != horizon + 1:
            raise LengthMismatch(f"e must have T+1={horizon + 1} entries, got {len(self.e)}")

    @property
    def horizon(self) -> int:
        return len(self.c)

    @property
    def terminal_soc(self) -> float:
        return float(self.e[-1])

    def stopping_time(self, threshold: float = 0.5) -> int:
        """First step (1-based) with z_t >= threshold, or T+1 when the plan never stops."""
        hits = np.flatnonzero(self.z >= threshold)
        return int(hits[0]) + 1 if hits.size else self.horizon + 1

    @classmethod
    def idle(cls, params: BatteryParams, horizon: int) -> 'DispatchPlan':
        from .dynamics import simulate_soc

        zeros = np.zeros(horizon)
        return cls(c=zeros.copy(), d=zeros.copy(), g=np.ones(horizon), z=zeros.copy(),
                   e=simulate_soc(params.e0, zeros, zeros, params))


def case_study_params() -> BatteryParams:
    return BatteryParams(e_min=0.0, e_max=10.0, power=5.0, eta_c=0.9, eta_d=0.9,
                         eta_self=0.995, e0=5.0)


def case_study_target(horizon: int = 24) -> TargetSpec:
    return TargetSpec(band_lo=5.0, band_hi=7.0, e_target=6.0, rho=10.0, epsilon=0.05,
                      critical_hours=(horizon,))
