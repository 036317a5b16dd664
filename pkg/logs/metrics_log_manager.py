import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional

_SAFE_NAME = re.compile(r"[^A-Za-z0-9_.-]+")

METRIC_FIELDS = (
    "step",
    "loss",
    "rate_y",
    "rate_z",
    "mse",
    "pre_loss",
    "alpha",
    "lambda",
)


def _sanitise(identifier: str) -> str:
    cleaned = _SAFE_NAME.sub("_", identifier)
    cleaned = cleaned.strip("._")
    return cleaned or "run"


def _json_value(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class MetricsLogManager:
    """Per-step training metrics stored as JSON lines, one file per model run.

    Lines carry no wall-clock fields so identical runs produce identical files.
    """

    def __init__(
        self,
        base_path: Path,
        *,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        self.base_path = Path(base_path)
        self.base_path.mkdir(parents=True, exist_ok=True)
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def log_file(self, run_name: str) -> Path:
        return self.base_path / f"{_sanitise(run_name)}.jsonl"

    def reset(self, run_name: str) -> None:
        """Start a fresh log for ``run_name``."""

        self.log_file(run_name).write_text("", encoding="utf-8")

    def truncate_after(self, run_name: str, step: int) -> None:
        """Drop entries beyond ``step`` (used when resuming from a checkpoint)."""

        kept = [entry for entry in self.read(run_name) if int(entry["step"]) <= step]
        with self.log_file(run_name).open("w", encoding="utf-8") as handle:
            for entry in kept:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")

    def append(self, run_name: str, metrics: Mapping[str, Any]) -> None:
        """Append one step's component losses."""

        missing = [name for name in METRIC_FIELDS if name not in metrics]
        if missing:
            raise ValueError(f"Metrics entry missing fields: {', '.join(missing)}")
        entry: Dict[str, Any] = {key: _json_value(value) for key, value in metrics.items()}
        with self.log_file(run_name).open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")

        self.logger.debug("Metrics appended for %s (step %s)", run_name, entry["step"])

    def iter_entries(self, run_name: str) -> Iterator[Dict[str, Any]]:
        log_file = self.log_file(run_name)
        if not log_file.exists():
            return
        with log_file.open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    self.logger.warning(
                        "Skipping invalid metrics line in %s: %s", log_file, line
                    )

    def read(self, run_name: str) -> List[Dict[str, Any]]:
        return list(self.iter_entries(run_name))
