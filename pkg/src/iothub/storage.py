"""Append-only time-series store with bounded retention and a durable backing log.

The in-memory ring buffer is authoritative at runtime; when a data directory is
configured every append is written to ``<data_dir>/feeds/<feed_id>.log`` (one
canonical sample record per line) and replayed on startup.
"""

from __future__ import annotations

import json
import threading
from bisect import bisect_left, bisect_right
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import IO

from .errors import OutOfOrder, UnknownFeed
from .model import Sample, canonical_json


@dataclass(frozen=True)
class RetentionPolicy:
    max_samples_per_feed: int = 100_000
    max_age_ms: int | None = None

    def __post_init__(self):
        if self.max_samples_per_feed < 1:
            raise ValueError("max_samples_per_feed must be >= 1")


class TimeSeriesStore:
    """Per-feed append-only sample sequences, sorted by (t_ms, seq)."""

    def __init__(self, data_dir: str | Path | None = None, retention: RetentionPolicy | None = None):
        self.retention = retention or RetentionPolicy()
        self._data_dir = Path(data_dir) if data_dir is not None else None
        self._series: dict[str, deque[Sample]] = {}
        self._logs: dict[str, IO[str]] = {}
        self._lock = threading.RLock()
        if self._data_dir is not None:
            (self._data_dir / "feeds").mkdir(parents=True, exist_ok=True)
            self._replay()

    # -- lifecycle -------------------------------------------------------

    def _replay(self) -> None:
        assert self._data_dir is not None
        for log_path in sorted((self._data_dir / "feeds").glob("*.log")):
            feed_id = log_path.stem
            series: deque[Sample] = deque()
            for line in log_path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                series.append(Sample.from_json_dict(json.loads(line)))
                self._evict(series)
            self._series[feed_id] = series

    def ensure_feed(self, feed_id: str, durable: bool = True) -> None:
        with self._lock:
            if feed_id not in self._series:
                self._series[feed_id] = deque()
            if durable and self._data_dir is not None and feed_id not in self._logs:
                path = self._data_dir / "feeds" / f"{feed_id}.log"
                self._logs[feed_id] = open(path, "a", encoding="utf-8")

    def remove_feed(self, feed_id: str) -> None:
        with self._lock:
            self._series.pop(feed_id, None)
            log = self._logs.pop(feed_id, None)
            if log is not None:
                log.close()
            if self._data_dir is not None:
                path = self._data_dir / "feeds" / f"{feed_id}.log"
                path.unlink(missing_ok=True)

    def close(self) -> None:
        with self._lock:
            for log in self._logs.values():
                log.close()
            self._logs.clear()

    def has_feed(self, feed_id: str) -> bool:
        return feed_id in self._series

    def feeds(self) -> list[str]:
        with self._lock:
            return sorted(self._series)

    # -- writes ----------------------------------------------------------

    def append(self, feed_id: str, sample: Sample) -> None:
        with self._lock:
            series = self._series.get(feed_id)
            if series is None:
                raise UnknownFeed(f"no series for feed {feed_id!r}")
            if series:
                last = series[-1]
                if sample.seq <= last.seq:
                    raise OutOfOrder(f"seq {sample.seq} not after {last.seq}")
                if (sample.t_ms, sample.seq) <= (last.t_ms, last.seq):
                    raise OutOfOrder(f"t_ms {sample.t_ms} regresses before {last.t_ms}")
            log = self._logs.get(feed_id)
            if log is not None:
                log.write(canonical_json(sample.to_json_dict()).decode("utf-8") + "\n")
                log.flush()
            series.append(sample)
            self._evict(series)

    def _evict(self, series: deque[Sample]) -> None:
        while len(series) > self.retention.max_samples_per_feed:
            series.popleft()
        if self.retention.max_age_ms is not None and series:
            horizon = series[-1].t_ms - self.retention.max_age_ms
            while series and series[0].t_ms < horizon:
                series.popleft()

    # -- reads -----------------------------------------------------------

    def query(self, feed_id: str, from_ms: int, to_ms: int, limit: int | None = None) -> list[Sample]:
        """Samples with from_ms <= t_ms <= to_ms, ascending, truncated to limit."""
        with self._lock:
            series = self._series.get(feed_id)
            if series is None:
                raise UnknownFeed(f"no series for feed {feed_id!r}")
            snapshot = list(series)
        keys = [s.t_ms for s in snapshot]
        lo = bisect_left(keys, from_ms)
        hi = bisect_right(keys, to_ms)
        window = snapshot[lo:hi]
        if limit is not None:
            window = window[:limit]
        return window

    def latest(self, feed_id: str) -> Sample | None:
        with self._lock:
            series = self._series.get(feed_id)
            if series is None:
                raise UnknownFeed(f"no series for feed {feed_id!r}")
            return series[-1] if series else None
