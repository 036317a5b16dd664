"""Per-frame evaluation records written as JSON lines."""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional


@dataclass(frozen=True)
class FrameRecord:
    """Outcome of coding one test frame with one model."""

    frame_id: str
    scene_id: str
    label: str
    lambda_index: int
    bpp: float
    psnr: float
    lossless: bool
    stream_bytes: int
    zeros: bool = False
    degrade_voxel: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if math.isinf(self.psnr):
            data["psnr"] = "inf"
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FrameRecord":
        payload = dict(data)
        payload["psnr"] = float(payload["psnr"])
        return cls(**payload)


class FrameRecordLog:
    """Thread-safe JSONL appender/reader for :class:`FrameRecord` entries."""

    def __init__(
        self,
        log_path: Path,
        *,
        logger: Optional[logging.Logger] = None,
    ) -> None:
        self.log_path = Path(log_path)
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self._lock = threading.Lock()

    def reset(self) -> None:
        with self._lock:
            self.log_path.write_text("", encoding="utf-8")

    def record(self, entry: FrameRecord) -> None:
        self.extend([entry])

    def extend(self, entries: Iterable[FrameRecord]) -> None:
        lines = [json.dumps(entry.to_dict(), sort_keys=True) for entry in entries]
        if not lines:
            return
        with self._lock:
            with self.log_path.open("a", encoding="utf-8") as handle:
                for line in lines:
                    handle.write(line + "\n")
        self.logger.debug("Recorded %d frame entries in %s", len(lines), self.log_path)

    def iter_entries(self) -> Iterator[FrameRecord]:
        if not self.log_path.exists():
            return
        with self.log_path.open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield FrameRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, TypeError, KeyError):
                    self.logger.warning(
                        "Skipping invalid record line in %s: %s", self.log_path, line
                    )

    def load_entries(self) -> List[FrameRecord]:
        return list(self.iter_entries())
