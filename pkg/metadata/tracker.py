import logging
import uuid
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

logger = logging.getLogger(__name__)


class RunTracker:
    """
    Tracks run metadata for reproducibility and debugging.
    Records the resolved settings, cell counters and errors of one CLI
    invocation, and writes them to run.json when an output directory is set.
    """

    def __init__(self, config: Dict[str, Any], version: str = "1.0.0",
                 out_dir: Optional[Union[str, Path]] = None, command: str = ''):
        self.run_id = str(uuid.uuid4())
        self.config = config
        self.version = version
        self.command = command
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.start_time = datetime.now(timezone.utc)
        self.end_time: Optional[datetime] = None
        self.status = 'created'

        self.cells_attempted = 0
        self.cells_completed = 0
        self.rows_emitted = 0
        self.failures = 0
        self.error_summary = defaultdict(int)

    def start_run(self):
        self.status = 'running'
        logger.info(f"Started run {self.run_id} ({self.command or 'run'}, version {self.version})")

    def increment_attempted(self, count: int = 1):
        self.cells_attempted += count

    def increment_completed(self, count: int = 1):
        self.cells_completed += count

    def increment_rows(self, count: int = 1):
        self.rows_emitted += count

    def record_error(self, error_type: str):
        """Record an error occurrence."""
        self.failures += 1
        self.error_summary[error_type] += 1

    def complete_run(self, status: str = 'completed'):
        """Mark the run finished, log a summary and persist run.json."""
        self.end_time = datetime.now(timezone.utc)
        self.status = status
        duration = (self.end_time - self.start_time).total_seconds()

        logger.info(
            f"Run {self.run_id} {status}: "
            f"{self.cells_completed}/{self.cells_attempted} cells, "
            f"{self.rows_emitted} rows, "
            f"{self.failures} failures in {duration:.1f}s"
        )
        if self.out_dir is None:
            return
        from harness.report import canonical_json

        path = self.out_dir / 'run.json'
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path.write_text(canonical_json(self.get_summary()), encoding='utf-8')
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")

    def get_summary(self) -> Dict[str, Any]:
        """Current run statistics summary."""
        end = self.end_time or datetime.now(timezone.utc)
        return {
            'run_id': self.run_id,
            'version': self.version,
            'command': self.command,
            'config': self.config,
            'status': self.status,
            'start_time': self.start_time.isoformat(),
            'end_time': self.end_time.isoformat() if self.end_time else None,
            'duration_seconds': (end - self.start_time).total_seconds(),
            'cells_attempted': self.cells_attempted,
            'cells_completed': self.cells_completed,
            'rows_emitted': self.rows_emitted,
            'failures': self.failures,
            'error_summary': dict(self.error_summary),
        }
