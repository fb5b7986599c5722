"""Pub/sub bus and pipe execution engine.

Per-feed processing is serialized behind the feed's lock: a publish validates,
stores and delivers before the next one starts, which gives every subscriber
strictly FIFO delivery in seq order. Distinct feeds process in parallel; a
derived feed's executor runs inside its sources' delivery path and publishes
downstream while the upstream lock is held, which is deadlock-free because the
dependency graph is kept acyclic.
"""

from __future__ import annotations

import math
import threading
import uuid
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from .clock import WallClock
from .errors import (
    CycleError,
    DependencyConflict,
    DuplicateId,
    EmptyTable,
    ConfigError,
    InvalidDescriptor,
    SchemaError,
    UnknownFeed,
    UnknownResource,
)
from .geo import CityTable
from .model import (
    FeedDescriptor,
    Sample,
    TypeRegistry,
    default_registry,
    sample_violations,
    validate_feed,
)
from .pipes import NodePlan, PipePlan, build_plan, derived_descriptor
from .storage import TimeSeriesStore


@dataclass(frozen=True)
class Subscription:
    id: str
    feed_id: str
    sink: Mapping[str, Any]
    created_at: int

    def to_json_dict(self) -> dict:
        return {"id": self.id, "feed_id": self.feed_id, "sink": dict(self.sink), "created_at": self.created_at}


class StreamChannel:
    """Bounded buffer feeding one event-stream consumer; overflow drops the oldest."""

    def __init__(self, maxlen: int = 1024):
        self._buf: deque[Sample] = deque(maxlen=maxlen)
        self._cond = threading.Condition()
        self.closed = False

    def push(self, sample: Sample) -> None:
        with self._cond:
            if self.closed:
                return
            self._buf.append(sample)
            self._cond.notify_all()

    def take(self, timeout_s: float | None = None) -> Sample | None:
        with self._cond:
            if not self._buf and not self.closed:
                self._cond.wait(timeout=timeout_s)
            if self._buf:
                return self._buf.popleft()
            return None

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


class _SubEntry:
    __slots__ = ("subscription", "deliver", "channel")

    def __init__(self, subscription: Subscription, deliver: Callable[[Sample], None], channel: StreamChannel | None = None):
        self.subscription = subscription
        self.deliver = deliver
        self.channel = channel


class _FeedState:
    def __init__(self, descriptor: FeedDescriptor, durable: bool, nominal_period_ms: int | None = None):
        self.descriptor = descriptor
        self.durable = durable
        self.nominal_period_ms = nominal_period_ms
        self.lock = threading.RLock()
        self.next_seq = 0
        self.last_seq = -1
        self.last_t = -1
        self.latest: Sample | None = None
        self.subs: dict[str, _SubEntry] = {}
        self.upstream_subs: list[str] = []
        self.owner_app: str | None = None


class DataflowEngine:
    """Feed registry plus the bus that routes samples and evaluates pipes."""

    def __init__(
        self,
        *,
        clock=None,
        registry: TypeRegistry | None = None,
        store: TimeSeriesStore | None = None,
        city_table: CityTable | None = None,
        hub_id: str = "hub",
        webhook_post: Callable[[str, bytes], int] | None = None,
    ):
        self.clock = clock or WallClock()
        self.registry = registry or default_registry()
        self.store = store or TimeSeriesStore()
        self.city_table = city_table
        self.hub_id = hub_id
        self._feeds: dict[str, _FeedState] = {}
        self._sub_index: dict[str, str] = {}  # sub id -> feed id
        self._graph_lock = threading.RLock()
        self._registration_counter = 0
        self._registration_order: dict[str, int] = {}
        self._webhooks = _WebhookDispatcher(webhook_post)

    # -- registry ----------------------------------------------------------

    def register_feed(self, descriptor: FeedDescriptor, *, nominal_period_ms: int | None = None) -> FeedDescriptor:
        if descriptor.kind == "derived":
            raise InvalidDescriptor("derived feeds are created through create_derived_feed")
        report = validate_feed(descriptor, self.registry)
        if not report.ok:
            raise InvalidDescriptor("descriptor fails validation", violations=list(report.violations))
        with self._graph_lock:
            if descriptor.id in self._feeds:
                raise DuplicateId(f"feed {descriptor.id!r} already exists")
            state = _FeedState(descriptor, durable=descriptor.has_stored_fields(), nominal_period_ms=nominal_period_ms)
            self.store.ensure_feed(descriptor.id, durable=state.durable)
            self._feeds[descriptor.id] = state
            self._registration_order[descriptor.id] = self._registration_counter
            self._registration_counter += 1
        return descriptor

    def create_derived_feed(
        self,
        pipe,
        *,
        feed_id: str | None = None,
        scope: str = "private",
        keywords: Iterable[str] = (),
        owner_app: str | None = None,
        created_at: int | None = None,
    ) -> FeedDescriptor:
        with self._graph_lock:
            new_id = feed_id if feed_id is not None else "derived-" + uuid.uuid4().hex[:12]
            # Cycle detection runs first so a pre-allocated output id used as a
            # source reports a cycle, not a missing feed.
            if self._reaches(set(pipe.sources), new_id):
                raise CycleError(f"feed {new_id!r} would depend on itself")
            inputs = []
            for source in pipe.sources:
                state = self._feeds.get(source)
                if state is None:
                    raise UnknownFeed(f"unknown source feed {source!r}")
                inputs.append(state.descriptor)
            if new_id in self._feeds:
                raise DuplicateId(f"feed {new_id!r} already exists")
            self._check_source_periods(pipe, inputs)
            plan = build_plan(pipe, inputs, registry=self.registry, city_table=self.city_table)
            descriptor = derived_descriptor(
                plan,
                feed_id=new_id,
                scope=scope,
                keywords=keywords,
                owner=self.hub_id,
                created_at=created_at if created_at is not None else self.clock.now_ms(),
            )
            report = validate_feed(descriptor, self.registry)
            if not report.ok:
                raise InvalidDescriptor("derived descriptor fails validation", violations=list(report.violations))
            executor = _PipeExecutor(self, new_id, plan, self.city_table)
            state = _FeedState(descriptor, durable=descriptor.has_stored_fields())
            state.owner_app = owner_app
            self.store.ensure_feed(new_id, durable=state.durable)
            self._feeds[new_id] = state
            self._registration_order[new_id] = self._registration_counter
            self._registration_counter += 1
            for index, source in enumerate(pipe.sources):
                sub = self._attach(
                    source,
                    sink={"kind": "internal", "derived": new_id},
                    deliver=_SourceTap(executor, index),
                )
                state.upstream_subs.append(sub.id)
        return descriptor

    def _reaches(self, roots: set[str], target: str) -> bool:
        """True when ``target`` is one of ``roots`` or an ancestor of any of them."""
        seen: set[str] = set()
        stack = list(roots)
        while stack:
            fid = stack.pop()
            if fid == target:
                return True
            if fid in seen:
                continue
            seen.add(fid)
            state = self._feeds.get(fid)
            if state is not None:
                stack.extend(state.descriptor.dependencies)
        return False

    def _check_source_periods(self, pipe, inputs: list[FeedDescriptor]) -> None:
        # Resample nodes reading a source directly are checked against the
        # registered nominal period when the operator does not declare one.
        for op in pipe.operators:
            if op.kind != "resample" or "source_period_ms" in op.params:
                continue
            if len(op.inputs) != 1 or not op.inputs[0].startswith("source:"):
                continue
            index = int(op.inputs[0].split(":", 1)[1])
            if index >= len(pipe.sources):
                continue
            state = self._feeds.get(pipe.sources[index])
            nominal = state.nominal_period_ms if state else None
            period = op.params.get("period_ms")
            if nominal is not None and isinstance(period, int) and period < nominal:
                raise ConfigError(
                    f"resample period {period}ms is below the source period {nominal}ms (upsampling unsupported)",
                    operator=op.id,
                )

    def remove_feed(self, feed_id: str) -> None:
        with self._graph_lock:
            state = self._feeds.get(feed_id)
            if state is None:
                raise UnknownFeed(f"unknown feed {feed_id!r}")
            dependents = [
                fid for fid, st in self._feeds.items()
                if feed_id in st.descriptor.dependencies
            ]
            if dependents:
                raise DependencyConflict(f"feed {feed_id!r} has dependents {sorted(dependents)}")
            for sub_id in state.upstream_subs:
                self._detach(sub_id)
            with state.lock:
                for entry in state.subs.values():
                    if entry.channel is not None:
                        entry.channel.close()
                    self._sub_index.pop(entry.subscription.id, None)
                state.subs.clear()
            del self._feeds[feed_id]
            self._registration_order.pop(feed_id, None)
            self.store.remove_feed(feed_id)

    def has_feed(self, feed_id: str) -> bool:
        return feed_id in self._feeds

    def descriptor(self, feed_id: str) -> FeedDescriptor:
        state = self._feeds.get(feed_id)
        if state is None:
            raise UnknownFeed(f"unknown feed {feed_id!r}")
        return state.descriptor

    def descriptors(self) -> list[FeedDescriptor]:
        with self._graph_lock:
            ordered = sorted(self._feeds.values(), key=lambda s: self._registration_order[s.descriptor.id])
            return [state.descriptor for state in ordered]

    def registration_index(self, feed_id: str) -> int:
        return self._registration_order[feed_id]

    def nominal_period_ms(self, feed_id: str) -> int | None:
        state = self._feeds.get(feed_id)
        return state.nominal_period_ms if state else None

    def owner_app(self, feed_id: str) -> str | None:
        state = self._feeds.get(feed_id)
        return state.owner_app if state else None

    def dependency_edges(self) -> list[tuple[str, str]]:
        """(feed, dependency) edges; tests topologically sort these."""
        with self._graph_lock:
            return [
                (fid, dep)
                for fid, state in self._feeds.items()
                for dep in state.descriptor.dependencies
            ]

    # -- pub/sub -----------------------------------------------------------

    def publish(self, feed_id: str, values: Mapping[str, Any], *, t_ms: int | None = None, seq: int | None = None) -> int:
        state = self._feeds.get(feed_id)
        if state is None:
            raise UnknownFeed(f"unknown feed {feed_id!r}")
        with state.lock:
            t = t_ms if t_ms is not None else self.clock.now_ms()
            s = seq if seq is not None else state.next_seq
            violations = sample_violations(state.descriptor, values)
            if violations:
                raise SchemaError("; ".join(violations))
            if s <= state.last_seq:
                raise SchemaError(f"non-monotone seq {s} (last was {state.last_seq})")
            if t < state.last_t:
                raise SchemaError(f"t_ms {t} regresses before {state.last_t}")
            sample = Sample(feed_id=feed_id, seq=s, t_ms=t, values=dict(values))
            if state.durable:
                self.store.append(feed_id, sample)
            state.latest = sample
            state.last_seq = s
            state.last_t = t
            state.next_seq = s + 1
            entries = list(state.subs.values())
            # Delivery stays inside the feed lock: that is the FIFO guarantee.
            for entry in entries:
                entry.deliver(sample)
            return len(entries)

    def _attach(self, feed_id: str, *, sink: Mapping[str, Any], deliver, channel: StreamChannel | None = None) -> Subscription:
        state = self._feeds.get(feed_id)
        if state is None:
            raise UnknownFeed(f"unknown feed {feed_id!r}")
        subscription = Subscription(
            id="sub-" + uuid.uuid4().hex[:12],
            feed_id=feed_id,
            sink=dict(sink),
            created_at=self.clock.now_ms(),
        )
        with state.lock:
            state.subs[subscription.id] = _SubEntry(subscription, deliver, channel)
        self._sub_index[subscription.id] = feed_id
        return subscription

    def subscribe_callback(self, feed_id: str, fn: Callable[[Sample], None]) -> Subscription:
        return self._attach(feed_id, sink={"kind": "internal"}, deliver=fn)

    def subscribe_stream(self, feed_id: str, maxlen: int = 1024) -> tuple[Subscription, StreamChannel]:
        channel = StreamChannel(maxlen=maxlen)
        sub = self._attach(feed_id, sink={"kind": "stream"}, deliver=channel.push, channel=channel)
        return sub, channel

    def subscribe_webhook(self, feed_id: str, url: str) -> Subscription:
        deliver = lambda sample: self._webhooks.submit(url, sample)  # noqa: E731
        return self._attach(feed_id, sink={"kind": "webhook", "url": url}, deliver=deliver)

    def unsubscribe(self, sub_id: str) -> None:
        if not self._detach(sub_id):
            raise UnknownResource(f"unknown subscription {sub_id!r}")

    def _detach(self, sub_id: str) -> bool:
        feed_id = self._sub_index.pop(sub_id, None)
        if feed_id is None:
            return False
        state = self._feeds.get(feed_id)
        if state is None:
            return True
        with state.lock:
            entry = state.subs.pop(sub_id, None)
            if entry is not None and entry.channel is not None:
                entry.channel.close()
        return True

    def subscription(self, sub_id: str) -> Subscription | None:
        feed_id = self._sub_index.get(sub_id)
        if feed_id is None:
            return None
        state = self._feeds.get(feed_id)
        if state is None:
            return None
        entry = state.subs.get(sub_id)
        return entry.subscription if entry else None

    # -- reads ---------------------------------------------------------------

    def latest(self, feed_id: str) -> Sample | None:
        state = self._feeds.get(feed_id)
        if state is None:
            raise UnknownFeed(f"unknown feed {feed_id!r}")
        return state.latest

    def query(self, feed_id: str, from_ms: int, to_ms: int, limit: int | None = None) -> list[Sample]:
        state = self._feeds.get(feed_id)
        if state is None:
            raise UnknownFeed(f"unknown feed {feed_id!r}")
        if not state.durable:
            return []
        return self.store.query(feed_id, from_ms, to_ms, limit)

    def close(self) -> None:
        self._webhooks.close()
        self.store.close()


class _SourceTap:
    """Routes one source feed's samples into a pipe executor."""

    __slots__ = ("executor", "index")

    def __init__(self, executor: "_PipeExecutor", index: int):
        self.executor = executor
        self.index = index

    def __call__(self, sample: Sample) -> None:
        self.executor.on_source(self.index, sample)


class _PipeExecutor:
    def __init__(self, engine: DataflowEngine, derived_id: str, plan: PipePlan, city_table: CityTable | None):
        self.engine = engine
        self.derived_id = derived_id
        self.plan = plan
        self._lock = threading.Lock()
        self._nodes: list[tuple[NodePlan, Any]] = []
        for node in plan.nodes:
            self._nodes.append((node, _build_runtime(node, engine.registry, city_table)))

    def on_source(self, index: int, sample: Sample) -> None:
        with self._lock:
            outputs = self._propagate(f"source:{index}", sample.t_ms, dict(sample.values))
            for t_ms, values in outputs:
                self.engine.publish(self.derived_id, values, t_ms=t_ms)

    def _propagate(self, start_ref: str, t_ms: int, values: Mapping[str, Any]) -> list[tuple[int, Mapping[str, Any]]]:
        events: dict[str, list[tuple[int, Mapping[str, Any]]]] = {start_ref: [(t_ms, values)]}
        for node, runtime in self._nodes:
            produced: list[tuple[int, Mapping[str, Any]]] = []
            for ref in node.op.inputs:
                for event_t, event_values in events.get(ref, ()):
                    produced.extend(runtime.process(ref, event_t, event_values))
            events[node.op.id] = produced
        return events.get(self.plan.terminal_ref, [])


def _build_runtime(node: NodePlan, registry: TypeRegistry, city_table: CityTable | None):
    kind = node.op.kind
    if kind == "filter":
        return _FilterRuntime(node)
    if kind == "aggregate_window":
        return _AggregateRuntime(node, registry)
    if kind == "resample":
        return _ResampleRuntime(node)
    if kind == "sliding_delta":
        return _DeltaRuntime(node)
    if kind == "anonymize_location":
        return _AnonymizeRuntime(node, city_table)
    raise SchemaError(f"no runtime for operator kind {kind!r}")


_COMPARATORS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "=": lambda a, b: a == b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
    "!=": lambda a, b: a != b,
}


class _FilterRuntime:
    def __init__(self, node: NodePlan):
        self.field = node.op.params["field"]
        self.cmp = _COMPARATORS[node.op.params["op"]]
        self.constant = node.op.params["value"]

    def process(self, ref: str, t_ms: int, values: Mapping[str, Any]):
        if self.cmp(values[self.field], self.constant):
            return [(t_ms, values)]
        return []


class _AggregateRuntime:
    def __init__(self, node: NodePlan, registry: TypeRegistry):
        meta = node.meta
        self.fn = meta["fn"]
        self.fields = meta["fields"]
        self.window_ms = meta["window_ms"]
        self.target_unit = meta["target_unit"]
        self.units = meta["units"]
        self.registry = registry
        self.out_name = node.output_schema[0].name
        self.window_start: int | None = None
        self.buffer: list[Any] = []

    def _converted(self, ref: str, values: Mapping[str, Any]) -> list[Any]:
        out = []
        for name in self.fields:
            value = values[name]
            unit = self.units[(ref, name)]
            if self.fn != "count" and unit != self.target_unit:
                value = self.registry.convert(value, unit, self.target_unit)
            out.append(value)
        return out

    def _apply(self, values: list[Any]):
        if self.fn == "count":
            return len(values)
        if self.fn == "sum":
            return sum(values)
        if self.fn == "min":
            return min(values)
        if self.fn == "max":
            return max(values)
        if self.fn == "magnitude":
            return math.sqrt(sum(v * v for v in values))
        return sum(values) / len(values)

    def process(self, ref: str, t_ms: int, values: Mapping[str, Any]):
        incoming = self._converted(ref, values)
        if self.window_ms == 0:
            return [(t_ms, {self.out_name: self._apply(incoming)})]
        outputs = []
        if self.window_start is None:
            self.window_start = t_ms
        while t_ms >= self.window_start + self.window_ms:
            if self.buffer:
                outputs.append((self.window_start + self.window_ms, {self.out_name: self._apply(self.buffer)}))
                self.buffer = []
            self.window_start += self.window_ms
        self.buffer.extend(incoming)
        return outputs


class _ResampleRuntime:
    def __init__(self, node: NodePlan):
        meta = node.meta
        self.period_ms = meta["period_ms"]
        self.strategy = meta["strategy"]
        self.mean_fields = set(meta["mean_fields"])
        self.field_names = [f.name for f in node.output_schema]
        self.window_start: int | None = None
        self.buffer: list[Mapping[str, Any]] = []

    def _flush(self, end_ms: int):
        if not self.buffer:
            return None
        out: dict[str, Any] = {}
        for name in self.field_names:
            if name in self.mean_fields:
                vals = [row[name] for row in self.buffer]
                out[name] = sum(vals) / len(vals)
            else:
                out[name] = self.buffer[-1][name]
        return (end_ms, out)

    def process(self, ref: str, t_ms: int, values: Mapping[str, Any]):
        outputs = []
        if self.window_start is None:
            self.window_start = t_ms
        while t_ms >= self.window_start + self.period_ms:
            emitted = self._flush(self.window_start + self.period_ms)
            if emitted is not None:
                outputs.append(emitted)
                self.buffer = []
            self.window_start += self.period_ms
        self.buffer.append(dict(values))
        return outputs


class _DeltaRuntime:
    def __init__(self, node: NodePlan):
        self.field = node.meta["field"]
        self.prev: dict[str, float] = {}

    def process(self, ref: str, t_ms: int, values: Mapping[str, Any]):
        current = values[self.field]
        previous = self.prev.get(ref)
        self.prev[ref] = current
        if previous is None:
            return []
        return [(t_ms, {"force": abs(current - previous)})]


class _AnonymizeRuntime:
    def __init__(self, node: NodePlan, city_table: CityTable | None):
        self.geo_field = node.meta["geo_field"]
        inline = node.meta.get("inline_table")
        if inline:
            self.table = CityTable.from_rows(inline)
        elif city_table is not None and len(city_table) > 0:
            self.table = city_table
        else:
            raise EmptyTable("anonymize_location requires a city table", operator=node.op.id)

    def process(self, ref: str, t_ms: int, values: Mapping[str, Any]):
        return [(t_ms, {"city": self.table.nearest(values[self.geo_field])})]


class _WebhookDispatcher:
    """At-most-once webhook delivery: three attempts, then the sample is dropped."""

    def __init__(self, post: Callable[[str, bytes], int] | None):
        self._post = post
        self._queue: deque = deque()
        self._cond = threading.Condition()
        self._thread: threading.Thread | None = None
        self._closed = False

    def submit(self, url: str, sample: Sample) -> None:
        from .model import canonical_json

        body = canonical_json(sample.to_json_dict())
        with self._cond:
            if self._closed:
                return
            self._queue.append((url, body))
            self._cond.notify()
            if self._thread is None:
                self._thread = threading.Thread(target=self._run, daemon=True, name="webhook-dispatch")
                self._thread.start()

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._queue and not self._closed:
                    self._cond.wait()
                if self._closed and not self._queue:
                    return
                url, body = self._queue.popleft()
            post = self._post or _default_post
            for _ in range(3):
                try:
                    status = post(url, body)
                    if 200 <= status < 300:
                        break
                except Exception:
                    continue

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


def _default_post(url: str, body: bytes) -> int:
    import urllib.request

    request = urllib.request.Request(
        url, data=body, headers={"Content-Type": "application/json"}, method="POST"
    )
    with urllib.request.urlopen(request, timeout=5) as response:
        return response.status
