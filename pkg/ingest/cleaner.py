import logging
from typing import List

import numpy as np
import pandas as pd

from .loader import (
    FEATURE_PREFIX,
    CsvParseError,
    IncompleteDay,
    ScenarioTable,
)

logger = logging.getLogger(__name__)

# Header is line 1, so data row i sits on line i + 2.
LINE_OFFSET = 2


class ScenarioCleaner:
    """
    Normalizes and validates raw scenario rows.
    Every day must carry hours 1..T exactly once with finite numbers.
    """

    def __init__(self, horizon: int = 24):
        if horizon < 1:
            raise ValueError(f"horizon must be positive, got {horizon}")
        self.horizon = horizon

    def clean(self, frame: pd.DataFrame, source: str = '<table>') -> ScenarioTable:
        frame = frame.copy()
        frame['day'] = frame['day'].astype(str).str.strip()
        self._check_days(frame, source)
        frame['hour'] = self._clean_hours(frame['hour'], source)
        numeric = ['price', 'temperature', *[c for c in frame.columns if c.startswith(FEATURE_PREFIX)]]
        for column in numeric:
            frame[column] = self._clean_numbers(frame[column], column, source)
        self._check_duplicates(frame, source)
        self._check_complete(frame, source)

        order = {day: i for i, day in enumerate(pd.unique(frame['day']))}
        frame = (frame.assign(_order=frame['day'].map(order))
                 .sort_values(['_order', 'hour'], kind='stable')
                 .drop(columns='_order')
                 .reset_index(drop=True))
        return ScenarioTable(frame, self.horizon)

    def _check_days(self, frame: pd.DataFrame, source: str):
        blank = np.flatnonzero(frame['day'].to_numpy() == '')
        if blank.size:
            raise CsvParseError(f"{source}: empty day id", line=int(blank[0]) + LINE_OFFSET)

    def _clean_hours(self, hours: pd.Series, source: str) -> pd.Series:
        """Hours must be integers in 1..T."""
        values = pd.to_numeric(hours, errors='coerce')
        bad = values.isna() | (values % 1 != 0) | (values < 1) | (values > self.horizon)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise CsvParseError(
                f"{source}: hour {hours.iloc[row]!r} is not an integer in 1..{self.horizon}",
                line=row + LINE_OFFSET,
            )
        return values.astype(int)

    def _clean_numbers(self, column: pd.Series, name: str, source: str) -> pd.Series:
        values = pd.to_numeric(column, errors='coerce').astype(float)
        bad = ~np.isfinite(values.to_numpy())
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise CsvParseError(f"{source}: {name} value {column.iloc[row]!r} is not a finite number",
                                line=row + LINE_OFFSET)
        return values

    def _check_duplicates(self, frame: pd.DataFrame, source: str):
        dupes = frame.duplicated(subset=['day', 'hour'], keep='first')
        if dupes.any():
            row = int(np.flatnonzero(dupes.to_numpy())[0])
            day, hour = frame['day'].iloc[row], frame['hour'].iloc[row]
            raise CsvParseError(f"{source}: duplicate row for day {day!r} hour {hour}", line=row + LINE_OFFSET)

    def _check_complete(self, frame: pd.DataFrame, source: str):
        expected = set(range(1, self.horizon + 1))
        incomplete: List[str] = []
        for day, rows in frame.groupby('day', sort=False):
            missing = sorted(expected - set(rows['hour']))
            if missing:
                lines = [int(i) + LINE_OFFSET for i in rows.index]
                logger.warning(
                    f"{source}: day {day!r} has {len(rows)} of {self.horizon} hours "
                    f"(missing {missing}, lines {lines[0]}-{lines[-1]})"
                )
                incomplete.append(day)
        if incomplete:
            first = incomplete[0]
            raise IncompleteDay(
                f"{source}: day {first!r} is incomplete"
                + (f" ({len(incomplete) - 1} more incomplete days)" if len(incomplete) > 1 else ""),
                day=first,
            )

