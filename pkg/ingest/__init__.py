from .loader import (
    CsvParseError,
    EmptyInput,
    IncompleteDay,
    ScenarioDataError,
    ScenarioTable,
    SchemaMismatch,
    load_csv,
    write_csv,
)
from .cleaner import ScenarioCleaner
from .synth import SynthSpec, synth_scenarios
from .splitter import split

__all__ = [
    'CsvParseError', 'EmptyInput', 'IncompleteDay', 'ScenarioDataError', 'ScenarioTable',
    'SchemaMismatch', 'load_csv', 'write_csv', 'ScenarioCleaner', 'SynthSpec', 'synth_scenarios', 'split',
]
