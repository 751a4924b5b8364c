import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from battery import PriceScenario

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ('day', 'hour', 'price', 'temperature')
FEATURE_PREFIX = 'feat_'


class ScenarioDataError(ValueError):
    """Base class for malformed scenario input."""


class EmptyInput(ScenarioDataError):
    pass


class SchemaMismatch(ScenarioDataError):
    pass


class CsvParseError(ScenarioDataError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class IncompleteDay(ScenarioDataError):
    def __init__(self, message: str, day: str):
        super().__init__(message)
        self.day = day


@dataclass
class ScenarioTable:
    """
    Long-format hourly table: one row per (day, hour). Rows are grouped by
    day in first-appearance order and sorted by hour within a day.
    """

    frame: pd.DataFrame
    horizon: int

    @property
    def feature_columns(self) -> Tuple[str, ...]:
        return tuple(c for c in self.frame.columns if c.startswith(FEATURE_PREFIX))

    @property
    def days(self) -> List[str]:
        return list(pd.unique(self.frame['day']))

    @property
    def n_days(self) -> int:
        return len(self.days)

    def subset(self, days: Sequence[str]) -> 'ScenarioTable':
        """Rows of the given days, in the order the days are listed."""
        order = {day: i for i, day in enumerate(days)}
        rows = self.frame[self.frame['day'].isin(order)]
        rows = rows.assign(_order=rows['day'].map(order)).sort_values(['_order', 'hour'], kind='stable')
        return ScenarioTable(rows.drop(columns='_order').reset_index(drop=True), self.horizon)

    def prices(self) -> np.ndarray:
        return self.frame['price'].to_numpy(dtype=float).reshape(self.n_days, self.horizon)

    def to_scenarios(self) -> List[PriceScenario]:
        """One scenario per day; features are the temperature row followed by every feat_* row."""
        feature_cols = ['temperature', *self.feature_columns]
        scenarios = []
        for day, rows in self.frame.groupby('day', sort=False):
            features = np.concatenate([rows[col].to_numpy(dtype=float) for col in feature_cols])
            scenarios.append(PriceScenario(prices=rows['price'].to_numpy(dtype=float),
                                           features=features, id=str(day)))
        return scenarios


def _check_header(columns: Sequence[str], path) -> None:
    head = tuple(columns[:len(REQUIRED_COLUMNS)])
    if head != REQUIRED_COLUMNS:
        raise SchemaMismatch(f"{path}: header must start with {','.join(REQUIRED_COLUMNS)}, got {','.join(columns)}")
    extra = [c for c in columns[len(REQUIRED_COLUMNS):] if not c.startswith(FEATURE_PREFIX)]
    if extra:
        raise SchemaMismatch(f"{path}: extra columns must start with '{FEATURE_PREFIX}', got {extra}")
    if len(set(columns)) != len(columns):
        raise SchemaMismatch(f"{path}: duplicate column names")


def load_csv(path: Union[str, Path], horizon: int = 24) -> ScenarioTable:
    """Read and validate a scenario CSV. Data lines are numbered from 2 in error messages."""
    from .cleaner import ScenarioCleaner

    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={'day': str}, float_precision='round_trip',
                            keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError as e:
        raise EmptyInput(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        raise CsvParseError(f"{path}: {e}") from e
    except FileNotFoundError:
        raise
    except UnicodeDecodeError as e:
        raise CsvParseError(f"{path}: not UTF-8 ({e})") from e

    _check_header(list(frame.columns), path)
    if frame.empty:
        raise EmptyInput(f"{path}: no data rows")

    table = ScenarioCleaner(horizon).clean(frame, source=str(path))
    logger.info(f"Loaded {table.n_days} days x {horizon} hours from {path}")
    return table


def write_csv(table: ScenarioTable, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n', encoding='utf-8')
    logger.info(f"Wrote {table.n_days} days to {path}")
