import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from battery import PlanOutcome

MODELS = ('saa', 'dqn', 'e2e')


@dataclass(frozen=True)
class EvalRow:
    model: str
    c: float
    scenario: str
    profit: float
    arbitrage: float
    stop_reward: float
    penalty: float
    tau: int
    e_T: float
    coverage: Optional[float] = None

    @classmethod
    def from_outcome(cls, model: str, c: float, outcome: PlanOutcome,
                     coverage: Optional[float] = None) -> 'EvalRow':
        return cls(model=model, c=float(c), scenario=outcome.scenario_id, profit=outcome.profit,
                   arbitrage=outcome.arbitrage, stop_reward=outcome.stop_reward, penalty=outcome.penalty,
                   tau=int(outcome.tau), e_T=outcome.e_terminal, coverage=coverage)


ROW_COLUMNS = tuple(f.name for f in fields(EvalRow))


@dataclass(frozen=True)
class CellFailure:
    model: str
    c: float
    error_type: str
    message: str


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)
    failures: List[CellFailure] = field(default_factory=list)

    def extend(self, rows: Iterable[EvalRow]):
        self.rows.extend(rows)

    def summary(self) -> Dict[str, Dict[str, Dict[str, Any]]]:
        return summarize(self.rows)


def c_key(c: float) -> str:
    return format(float(c), '.17g')


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def scenario_hash(scenario_ids: Sequence[str]) -> str:
    return hashlib.sha256('\n'.join(scenario_ids).encode('utf-8')).hexdigest()


def summarize(rows: Sequence[EvalRow]) -> Dict[str, Dict[str, Dict[str, Any]]]:
    """
    Aggregates per (model, c). Standard deviations are population values;
    std_pct is relative to |mean profit| and undefined when the mean is zero.
    """
    groups: Dict[str, Dict[str, List[EvalRow]]] = {}
    for row in rows:
        groups.setdefault(row.model, {}).setdefault(c_key(row.c), []).append(row)

    summary = {}
    for model, by_c in groups.items():
        summary[model] = {}
        for key, cell in by_c.items():
            profit = np.array([r.profit for r in cell])
            mean_profit = float(profit.mean())
            std_profit = float(profit.std())
            coverage = [r.coverage for r in cell if r.coverage is not None and math.isfinite(r.coverage)]
            summary[model][key] = {
                'c': float(key),
                'n': len(cell),
                'mean_profit': mean_profit,
                'std_profit': std_profit,
                'std_pct': 100.0 * std_profit / abs(mean_profit) if mean_profit != 0 else None,
                'mean_arbitrage': _mean([r.arbitrage for r in cell]),
                'mean_stop_reward': _mean([r.stop_reward for r in cell]),
                'mean_penalty': _mean([r.penalty for r in cell]),
                'mean_tau': _mean([r.tau for r in cell]),
                'mean_e_T': _mean([r.e_T for r in cell]),
                'coverage': _mean(coverage) if coverage else None,
                'test_hash': scenario_hash([r.scenario for r in cell]),
            }
    return summary


def table_rows(summary: Dict[str, Dict[str, Dict[str, Any]]], c_values: Sequence[float] = (5, 10, 15)) -> List[Dict[str, Any]]:
    """Profit, stopping time and stopping reward per model at the selected reward levels."""
    out = []
    for model in sorted(summary):
        for c in c_values:
            cell = summary[model].get(c_key(c))
            if cell is None:
                continue
            out.append({'model': model, 'c': float(c), 'mean_profit': cell['mean_profit'],
                        'mean_tau': cell['mean_tau'], 'mean_stop_reward': cell['mean_stop_reward']})
    return out


def _encode(value: Any, indent: int, level: int) -> str:
    pad = ' ' * (indent * (level + 1))
    end = ' ' * (indent * level)
    if value is None or isinstance(value, bool):
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g') if math.isfinite(value) else 'null'
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        if not value:
            return '{}'
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_encode(value[k], indent, level + 1)}"
                 for k in sorted(value, key=str)]
        return '{\n' + ',\n'.join(items) + '\n' + end + '}'
    if isinstance(value, (list, tuple)):
        if not value:
            return '[]'
        items = [pad + _encode(v, indent, level + 1) for v in value]
        return '[\n' + ',\n'.join(items) + '\n' + end + ']'
    raise TypeError(f"Cannot encode {type(value).__name__} as JSON")


def canonical_json(value: Any, indent: int = 2) -> str:
    """Sorted keys, floats with 17 significant digits, null for non-finite numbers."""
    return _encode(value, indent, 0) + '\n'
