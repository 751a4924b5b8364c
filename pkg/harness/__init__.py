from .config import ConfigError, Settings, load_config_file, parse_c_values
from .report import (
    MODELS,
    ROW_COLUMNS,
    CellFailure,
    EvalReport,
    EvalRow,
    c_key,
    canonical_json,
    scenario_hash,
    summarize,
    table_rows,
)
from .sweep import CELL_ERRORS, SplitData, SweepRunner, run_sweep

__all__ = [
    'ConfigError', 'Settings', 'load_config_file', 'parse_c_values',
    'MODELS', 'ROW_COLUMNS', 'CellFailure', 'EvalReport', 'EvalRow', 'c_key', 'canonical_json',
    'scenario_hash', 'summarize', 'table_rows',
    'CELL_ERRORS', 'SplitData', 'SweepRunner', 'run_sweep',
]
