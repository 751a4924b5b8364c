import logging
import math
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd

from battery import DispatchPlan
from harness.report import (
    ROW_COLUMNS,
    EvalReport,
    EvalRow,
    canonical_json,
    summarize,
)

logger = logging.getLogger(__name__)

PROFIT_COLUMNS = ['model', 'c', 'mean_profit', 'std_profit', 'std_pct']
STOPPING_COLUMNS = ['model', 'c', 'mean_tau', 'mean_e_T']
FAILURE_COLUMNS = ['model', 'c', 'error_type', 'message']


class ReportStorage:
    """
    Persists evaluation reports under one output directory:
    rows.csv, summary.json and the plot-ready fig_profit.csv / fig_stopping.csv.
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    def _write_text(self, name: str, text: str):
        path = self._path(name)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='\n') as f:
                f.write(text)
        except OSError as e:
            raise OSError(f"Cannot write {path}: {e}") from e

    def _write_frame(self, name: str, frame: pd.DataFrame):
        self._write_text(name, frame.to_csv(index=False, float_format='%.17g', lineterminator='\n'))

    def write_report(self, report: EvalReport) -> Dict[str, int]:
        """Write every report file; returns the number of data lines per file."""
        rows = pd.DataFrame([[getattr(r, c) for c in ROW_COLUMNS] for r in report.rows], columns=list(ROW_COLUMNS))
        self._write_frame('rows.csv', rows)
        counts = self.write_summary(report.rows)
        counts['rows.csv'] = len(rows)
        if report.failures:
            failures = pd.DataFrame([[f.model, f.c, f.error_type, f.message] for f in report.failures],
                                    columns=FAILURE_COLUMNS)
            self._write_frame('failures.csv', failures)
            counts['failures.csv'] = len(failures)
        logger.info(f"Wrote report to {self.out_dir}: {len(rows)} rows, {len(report.failures)} failed cells")
        return counts

    def write_summary(self, rows: List[EvalRow]) -> Dict[str, int]:
        """summary.json and the two plot CSVs, all derived from the rows alone."""
        summary = summarize(rows)
        self._write_text('summary.json', canonical_json(summary))

        profit, stopping = [], []
        for model in sorted(summary):
            for key in sorted(summary[model], key=float):
                cell = summary[model][key]
                profit.append([model, cell['c'], cell['mean_profit'], cell['std_profit'], cell['std_pct']])
                stopping.append([model, cell['c'], cell['mean_tau'], cell['mean_e_T']])
        self._write_frame('fig_profit.csv', pd.DataFrame(profit, columns=PROFIT_COLUMNS))
        self._write_frame('fig_stopping.csv', pd.DataFrame(stopping, columns=STOPPING_COLUMNS))
        return {'summary.json': len(summary), 'fig_profit.csv': len(profit), 'fig_stopping.csv': len(stopping)}

    def artifact_path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self._path(name)

    def write_plan(self, plan: DispatchPlan, name: str = 'plan.csv'):
        """Hourly dispatch levels with the SoC at the end of each hour."""
        frame = pd.DataFrame({
            'hour': range(1, plan.horizon + 1),
            'c': plan.c, 'd': plan.d, 'g': plan.g, 'z': plan.z,
            'e': plan.e[1:],
        })
        self._write_frame(name, frame)

    def load_rows(self) -> List[EvalRow]:
        path = self._path('rows.csv')
        try:
            frame = pd.read_csv(path, dtype={'model': str, 'scenario': str}, float_precision='round_trip',
                                keep_default_na=False, na_values={'coverage': ['']})
        except OSError as e:
            raise OSError(f"Cannot read {path}: {e}") from e
        missing = [c for c in ROW_COLUMNS if c not in frame.columns]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")

        rows = []
        for record in frame[list(ROW_COLUMNS)].to_dict('records'):
            coverage = record['coverage']
            rows.append(EvalRow(
                model=record['model'], c=float(record['c']), scenario=record['scenario'],
                profit=float(record['profit']), arbitrage=float(record['arbitrage']),
                stop_reward=float(record['stop_reward']), penalty=float(record['penalty']),
                tau=int(record['tau']), e_T=float(record['e_T']),
                coverage=None if coverage is None or (isinstance(coverage, float) and math.isnan(coverage))
                else float(coverage),
            ))
        logger.info(f"Loaded {len(rows)} rows from {path}")
        return rows
