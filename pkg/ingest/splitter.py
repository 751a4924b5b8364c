import logging
from typing import Sequence, Tuple

import numpy as np

from .loader import ScenarioTable

logger = logging.getLogger(__name__)


def split(table: ScenarioTable, fractions: Sequence[float], seed: int) -> Tuple[ScenarioTable, ScenarioTable, ScenarioTable]:
    """
    Day-level train / calibration / test split. Days are permuted with the
    seed, cut by rounded fractions, and each part keeps the table's day order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError(f"Need three fractions (train, cal, test), got {fractions}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"Fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"Fractions must sum to 1, got {sum(fractions)}")

    days = table.days
    n = len(days)
    n_train = min(n, int(round(fractions[0] * n)))
    n_cal = min(n - n_train, int(round(fractions[1] * n)))
    perm = np.random.default_rng(seed).permutation(n)
    parts = (perm[:n_train], perm[n_train:n_train + n_cal], perm[n_train + n_cal:])

    train, cal, test = (table.subset([days[i] for i in np.sort(idx)]) for idx in parts)
    logger.info(f"Split {n} days into {train.n_days} train / {cal.n_days} calibration / {test.n_days} test")
    return train, cal, test
