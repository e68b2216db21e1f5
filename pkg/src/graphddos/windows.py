"""Closing flow streams into batches by time span or count, whichever first."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional

from .errors import ConfigurationError
from .ingest import FlowRecord

CLOSE_TIME = "time"
CLOSE_COUNT = "count"
CLOSE_END = "end"


@dataclass(frozen=True)
class WindowConfig:
    delta_t: float  # seconds
    max_flows: int
    skew_tolerance: float = 0.0  # seconds of timestamp regression tolerated silently

    def __post_init__(self):
        if self.delta_t <= 0:
            raise ConfigurationError(f"delta_t must be positive, got {self.delta_t}")
        if self.max_flows < 1:
            raise ConfigurationError(f"max_flows must be >= 1, got {self.max_flows}")
        if self.skew_tolerance < 0:
            raise ConfigurationError("skew_tolerance must be >= 0")

    @property
    def delta_t_us(self) -> int:
        return int(round(self.delta_t * 1e6))

    @property
    def skew_us(self) -> int:
        return int(round(self.skew_tolerance * 1e6))


@dataclass
class WindowBatch:
    index: int
    records: List[FlowRecord]
    close_reason: str

    @property
    def start_ts(self) -> int:
        return self.records[0].timestamp

    @property
    def end_ts(self) -> int:
        return max(r.timestamp for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


class Windower:
    """Stateful batcher. A batch closes just before adding a record that
    would stretch its span to delta_t, or right after the record that fills
    it to max_flows. Records arriving behind the watermark beyond the skew
    tolerance stay in the current batch but are counted as late.
    """

    def __init__(self, cfg: WindowConfig):
        self.cfg = cfg
        self.late_records = 0
        self._buf: List[FlowRecord] = []
        self._next_index = 0
        self._watermark: Optional[int] = None

    def push(self, record: FlowRecord) -> List[WindowBatch]:
        closed: List[WindowBatch] = []
        if self._watermark is not None and record.timestamp < self._watermark - self.cfg.skew_us:
            self.late_records += 1
        if self._watermark is None or record.timestamp > self._watermark:
            self._watermark = record.timestamp
        if self._buf and record.timestamp - self._buf[0].timestamp >= self.cfg.delta_t_us:
            closed.append(self._close(CLOSE_TIME))
        self._buf.append(record)
        if len(self._buf) >= self.cfg.max_flows:
            closed.append(self._close(CLOSE_COUNT))
        return closed

    def flush(self) -> Optional[WindowBatch]:
        if self._buf:
            return self._close(CLOSE_END)
        return None

    def _close(self, reason: str) -> WindowBatch:
        batch = WindowBatch(index=self._next_index, records=self._buf, close_reason=reason)
        self._next_index += 1
        self._buf = []
        return batch


def window_batches(records: Iterable[FlowRecord], cfg: WindowConfig) -> Iterator[WindowBatch]:
    """Batch a whole stream; the trailing partial batch is flushed at end."""
    w = Windower(cfg)
    for r in records:
        yield from w.push(r)
    final = w.flush()
    if final is not None:
        yield final
