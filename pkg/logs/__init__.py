"""Helpers for creating the JSONL log writers used by training and evaluation."""

from pathlib import Path
from typing import Optional

from .frame_record_log import FrameRecord, FrameRecordLog
from .metrics_log_manager import METRIC_FIELDS, MetricsLogManager

__all__ = [
    "FrameRecord",
    "FrameRecordLog",
    "METRIC_FIELDS",
    "MetricsLogManager",
    "get_metrics_log_manager",
]


def get_metrics_log_manager(
    base_path: Optional[Path] = None, *, default_root: Optional[Path] = None
) -> Optional[MetricsLogManager]:
    """Return a :class:`MetricsLogManager`, or ``None`` when metrics logging is disabled.

    ``PCIC_METRICS_LOG_ENABLED=0`` disables the log; ``PCIC_OUTPUT_DIR`` moves
    the default location.
    """

    from config.config import Settings

    active = Settings()
    if not active.metrics_log_enabled:
        return None
    if base_path is not None:
        return MetricsLogManager(Path(base_path))
    root = active.output_dir or default_root or Path("runs")
    return MetricsLogManager(Path(root) / "metrics")
