import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from battery import LengthMismatch, PriceScenario


class InsufficientCalibration(ValueError):
    """Too few calibration samples for the requested miscoverage level."""


@dataclass(frozen=True)
class UncertaintyBox:
    center: np.ndarray
    halfwidth: np.ndarray
    delta: float = 0.05

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        halfwidth = np.asarray(self.halfwidth, dtype=float).reshape(-1)
        if center.shape != halfwidth.shape:
            raise LengthMismatch(f"center has {center.size} hours, halfwidth {halfwidth.size}")
        if np.any(halfwidth < 0):
            raise ValueError("halfwidth must be non-negative")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'halfwidth', halfwidth)

    @property
    def horizon(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.halfwidth

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.halfwidth

    def covers(self, prices) -> np.ndarray:
        prices = np.asarray(prices, dtype=float)
        return (prices >= self.lower) & (prices <= self.upper)


def min_calibration_samples(delta: float) -> int:
    return max(1, math.ceil(1 / delta - 1e-9) - 1)


def conformal_calibrate(residuals, delta: float) -> np.ndarray:
    """
    Hourly split-conformal radius: the ceil((1 - delta)(n + 1))-th smallest
    absolute residual of every column.
    """
    residuals = np.abs(np.atleast_2d(np.asarray(residuals, dtype=float)))
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    n = residuals.shape[0]
    k = math.ceil((1 - delta) * (n + 1) - 1e-9)
    if n == 0 or k > n:
        raise InsufficientCalibration(
            f"{n} calibration samples cannot support delta={delta} (need order statistic {k})"
        )
    return np.sort(residuals, axis=0)[k - 1]


def marginal_coverage(boxes: Sequence[UncertaintyBox], realized: Sequence[PriceScenario]) -> float:
    if len(boxes) != len(realized):
        raise LengthMismatch(f"{len(boxes)} boxes for {len(realized)} scenarios")
    hits = total = 0
    for box, scenario in zip(boxes, realized):
        if box.horizon != scenario.horizon:
            raise LengthMismatch(f"Box horizon {box.horizon} != scenario {scenario.id!r} horizon")
        covered = box.covers(scenario.prices)
        hits += int(covered.sum())
        total += covered.size
    return hits / total if total else float('nan')
