"""Wall and simulated clocks, plus the schedulers that drive periodic producers."""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class SimClock:
    """Virtual clock advanced only by its scheduler; deterministic by construction."""

    def __init__(self, start_ms: int = 0):
        self._now_ms = start_ms

    def now_ms(self) -> int:
        return self._now_ms

    def _advance_to(self, t_ms: int) -> None:
        if t_ms > self._now_ms:
            self._now_ms = t_ms


class SimScheduler:
    """Runs scheduled callables in timestamp order, advancing the clock with each task.

    Ties execute in scheduling order, so a run over the same task set is
    always byte-for-byte reproducible.
    """

    def __init__(self, clock: SimClock):
        self.clock = clock
        self._heap: list[tuple[int, int, dict]] = []
        self._counter = itertools.count()

    def schedule(self, at_ms: int, fn: Callable[[], None]) -> dict:
        entry = {"fn": fn, "cancelled": False}
        heapq.heappush(self._heap, (at_ms, next(self._counter), entry))
        return entry

    def cancel(self, handle: dict) -> None:
        handle["cancelled"] = True

    def pending(self) -> int:
        return sum(1 for _, _, e in self._heap if not e["cancelled"])

    def run_until(self, t_end_ms: int) -> int:
        """Execute every task due at or before ``t_end_ms``; returns the count run."""
        ran = 0
        while self._heap and self._heap[0][0] <= t_end_ms:
            at_ms, _, entry = heapq.heappop(self._heap)
            if entry["cancelled"]:
                continue
            self.clock._advance_to(at_ms)
            entry["fn"]()
            ran += 1
        self.clock._advance_to(t_end_ms)
        return ran

    def run_until_idle(self, limit_ms: int | None = None) -> int:
        ran = 0
        while self._heap:
            at_ms, _, entry = self._heap[0]
            if limit_ms is not None and at_ms > limit_ms:
                break
            heapq.heappop(self._heap)
            if entry["cancelled"]:
                continue
            self.clock._advance_to(at_ms)
            entry["fn"]()
            ran += 1
        return ran


class WallScheduler:
    """Timer-thread scheduler for live mode; mirrors the SimScheduler interface."""

    def __init__(self, clock: WallClock):
        self.clock = clock
        self._timers: set[threading.Timer] = set()
        self._lock = threading.Lock()
        self._closed = False

    def schedule(self, at_ms: int, fn: Callable[[], None]):
        delay = max(0.0, (at_ms - self.clock.now_ms()) / 1000.0)
        timer = threading.Timer(delay, self._run, args=(fn,))
        timer.daemon = True
        with self._lock:
            if self._closed:
                return timer
            self._timers.add(timer)
        timer.start()
        return timer

    def _run(self, fn: Callable[[], None]) -> None:
        try:
            fn()
        finally:
            with self._lock:
                self._timers = {t for t in self._timers if t.is_alive()}

    def cancel(self, handle) -> None:
        handle.cancel()

    def shutdown(self) -> None:
        with self._lock:
            self._closed = True
            timers = list(self._timers)
            self._timers.clear()
        for t in timers:
            t.cancel()
