"""Enablers: simulated device adapters that expose devices as atomic feeds.

Four device classes are built in: a trace-driven accelerometer, synthetic
temperature and GPS sensors, and an ON/OFF switch actuator. Additional enabler
descriptors can be ingested from a meta-hub catalog (metadata only, no code).
"""

from __future__ import annotations

import json
import math
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ConfigError, NotAnActuator, SchemaError, UnknownEnabler, UnknownFeed
from .model import FeedDescriptor, FieldDescriptor, SemanticType, validate_feed

GRAVITY_M_S2 = 9.81
REST_NOISE_M_S2 = 0.05
SHAKE_AMPLITUDE_M_S2 = 12.0
DEFAULT_ACCEL_PERIOD_MS = 200


def _st(st_id: str, kind: str, unit: str | None, cls: str) -> SemanticType:
    return SemanticType(id=st_id, value_kind=kind, unit=unit, aggregation_class=cls)


def _live(name: str, st: SemanticType, keywords: Iterable[str]) -> FieldDescriptor:
    return FieldDescriptor(name=name, semantic_type=st, access_mode="live", keywords=frozenset(keywords))


def accelerometer_template(feed_id: str = "accelerometer") -> FeedDescriptor:
    axis = _st("acceleration", "decimal", "m_per_s2", "acceleration")
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(
            _live("x", axis, ["acceleration"]),
            _live("y", axis, ["acceleration"]),
            _live("z", axis, ["acceleration"]),
        ),
        keywords=frozenset({"accelerometer", "motion"}),
    )


def temperature_template(feed_id: str = "temperature") -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(_live("temperature", _st("temperature", "decimal", "celsius", "temperature"), ["temperature"]),),
        keywords=frozenset({"temperature", "weather"}),
    )


def gps_template(feed_id: str = "gps") -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(_live("position", _st("location", "geo_point", None, "location"), ["gps", "location"]),),
        keywords=frozenset({"gps", "location"}),
    )


def switch_template(feed_id: str = "switch") -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_actuator",
        fields=(_live("on", _st("switch_state", "boolean", None, "switch_state"), ["switch"]),),
        keywords=frozenset({"switch", "actuator"}),
    )


@dataclass(frozen=True)
class EnablerDescriptor:
    id: str
    device_class: str
    config_schema: Mapping[str, str]
    produces: tuple[FeedDescriptor, ...]

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "device_class": self.device_class,
            "config_schema": dict(self.config_schema),
            "produces": [d.to_json_dict() for d in self.produces],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "EnablerDescriptor":
        for key in ("id", "device_class", "config_schema", "produces"):
            if key not in data:
                raise SchemaError(f"enabler missing key {key!r}")
        return cls(
            id=str(data["id"]),
            device_class=str(data["device_class"]),
            config_schema=dict(data["config_schema"]),
            produces=tuple(FeedDescriptor.from_json_dict(d) for d in data["produces"]),
        )


def built_in_enablers() -> tuple[EnablerDescriptor, ...]:
    return (
        EnablerDescriptor(
            id="accelerometer",
            device_class="accelerometer",
            config_schema={"trace_path": "text", "period_ms": "integer", "feed_id": "text"},
            produces=(accelerometer_template(),),
        ),
        EnablerDescriptor(
            id="temperature_sensor",
            device_class="temperature_sensor",
            config_schema={"period_ms": "integer", "base_c": "decimal", "amplitude_c": "decimal", "seed": "integer", "feed_id": "text"},
            produces=(temperature_template(),),
        ),
        EnablerDescriptor(
            id="gps_sensor",
            device_class="gps_sensor",
            config_schema={"period_ms": "integer", "start_lat": "decimal", "start_lon": "decimal", "seed": "integer", "feed_id": "text"},
            produces=(gps_template(),),
        ),
        EnablerDescriptor(
            id="switch",
            device_class="switch",
            config_schema={"feed_id": "text"},
            produces=(switch_template(),),
        ),
    )


class EnablerRegistry:
    """Built-in enablers plus descriptors fetched from meta-hub catalogs, id-deduplicated."""

    def __init__(self):
        self._builtin = {d.id: d for d in built_in_enablers()}
        self._remote: dict[str, EnablerDescriptor] = {}

    def list(self) -> list[EnablerDescriptor]:
        merged = dict(self._remote)
        merged.update(self._builtin)
        return [merged[k] for k in sorted(merged)]

    def get(self, enabler_id: str) -> EnablerDescriptor:
        if enabler_id in self._builtin:
            return self._builtin[enabler_id]
        if enabler_id in self._remote:
            return self._remote[enabler_id]
        raise UnknownEnabler(f"unknown enabler {enabler_id!r}")

    def ingest(self, descriptors: Iterable[EnablerDescriptor]) -> int:
        added = 0
        for desc in descriptors:
            if desc.id in self._builtin or desc.id in self._remote:
                continue
            for template in desc.produces:
                report = validate_feed(template)
                if not report.ok:
                    raise SchemaError(f"enabler {desc.id!r} template invalid: {report.violations}")
            self._remote[desc.id] = desc
            added += 1
        return added

    def fetch_from_metahub(self, base_url: str, transport) -> int:
        status, body = transport.request("GET", base_url.rstrip("/") + "/catalog/enablers")
        if status != 200:
            raise SchemaError(f"enabler catalog fetch failed with status {status}")
        entries = json.loads(body.decode("utf-8"))
        return self.ingest(EnablerDescriptor.from_json_dict(e) for e in entries)


# -- traces ----------------------------------------------------------------


@dataclass(frozen=True)
class StageSpec:
    kind: str  # rest | shake_every | shake_fast
    duration_s: float
    interval_s: float | None = None


@dataclass(frozen=True)
class Trace:
    period_ms: int
    rows: tuple[tuple[int, float, float, float], ...]
    events: tuple[tuple[int, int], ...]  # (t_ms, stage index) of each shake spike
    stages: tuple[tuple[str, int, int], ...]  # (kind, start_ms, end_ms)

    def event_times_ms(self, stage_index: int | None = None) -> list[int]:
        return [t for t, s in self.events if stage_index is None or s == stage_index]

    def write_file(self, path: str | Path) -> None:
        lines = [f"{t}\t{x!r}\t{y!r}\t{z!r}" for t, x, y, z in self.rows]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trace_rows(path: str | Path) -> list[tuple[int, float, float, float]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        t, x, y, z = line.split("\t")
        rows.append((int(t), float(x), float(y), float(z)))
    return rows


def generate_trace(stages: Iterable[StageSpec], seed: int, period_ms: int = DEFAULT_ACCEL_PERIOD_MS) -> Trace:
    """Deterministic accelerometer trace for the staged shake experiment.

    Rest samples sit at gravity plus bounded noise; each shake event is a
    single-sample axis excursion large enough to cross the detection
    threshold. Samples are spaced exactly ``period_ms`` apart.
    """
    rng = random.Random(seed)
    rows: list[tuple[int, float, float, float]] = []
    events: list[tuple[int, int]] = []
    bounds: list[tuple[str, int, int]] = []
    cursor = 0
    for index, stage in enumerate(stages):
        if stage.duration_s <= 0:
            raise ConfigError("stage durations must be positive")
        duration_ms = int(round(stage.duration_s * 1000))
        count = duration_ms // period_ms
        spikes: set[int] = set()
        if stage.kind == "shake_every":
            if not stage.interval_s or stage.interval_s <= 0:
                raise ConfigError("shake_every requires a positive interval_s")
            interval_ms = int(round(stage.interval_s * 1000))
            offset = 0
            while offset < duration_ms:
                spikes.add((offset // period_ms) * period_ms)
                offset += interval_ms
        elif stage.kind == "shake_fast":
            # A spike every other sample keeps the force above threshold
            # continuously, so firing becomes cooldown-limited.
            spikes.update(range(0, duration_ms, 2 * period_ms))
        elif stage.kind != "rest":
            raise ConfigError(f"unknown stage kind {stage.kind!r}")

        for i in range(count):
            rel = i * period_ms
            x = rng.uniform(-REST_NOISE_M_S2, REST_NOISE_M_S2)
            y = rng.uniform(-REST_NOISE_M_S2, REST_NOISE_M_S2)
            z = GRAVITY_M_S2 + rng.uniform(-REST_NOISE_M_S2, REST_NOISE_M_S2)
            if rel in spikes:
                x += SHAKE_AMPLITUDE_M_S2
                events.append((cursor + rel, index))
            rows.append((cursor + rel, x, y, z))
        bounds.append((stage.kind, cursor, cursor + count * period_ms))
        cursor += count * period_ms
    return Trace(period_ms=period_ms, rows=tuple(rows), events=tuple(events), stages=tuple(bounds))


# -- device manager ----------------------------------------------------------


class _SwitchState:
    __slots__ = ("lock", "on", "field")

    def __init__(self, field: str, on: bool = False):
        self.lock = threading.Lock()
        self.on = on
        self.field = field


class DeviceManager:
    """Instantiates enablers as live feeds and applies actuator commands."""

    def __init__(self, engine, scheduler, registry: EnablerRegistry | None = None):
        self.engine = engine
        self.scheduler = scheduler
        self.registry = registry or EnablerRegistry()
        self._counters: dict[str, int] = {}
        self._switches: dict[str, _SwitchState] = {}
        self._stopped: set[str] = set()

    def list_enablers(self) -> list[EnablerDescriptor]:
        return self.registry.list()

    def _next_id(self, enabler_id: str) -> str:
        n = self._counters.get(enabler_id, 0)
        self._counters[enabler_id] = n + 1
        return f"{enabler_id}-{n}"

    def instantiate(self, enabler_id: str, config: Mapping[str, Any] | None = None) -> list[str]:
        config = dict(config or {})
        enabler = self.registry.get(enabler_id)
        device_class = enabler.device_class
        if device_class == "accelerometer":
            return [self._start_accelerometer(enabler_id, config)]
        if device_class == "temperature_sensor":
            return [self._start_temperature(enabler_id, config)]
        if device_class == "gps_sensor":
            return [self._start_gps(enabler_id, config)]
        if device_class == "switch":
            return [self._start_switch(enabler_id, config)]
        raise ConfigError(f"enabler {enabler_id!r} has unsupported device class {device_class!r}")

    def _feed_id(self, enabler_id: str, config: Mapping[str, Any]) -> str:
        feed_id = config.get("feed_id")
        if feed_id is not None and not isinstance(feed_id, str):
            raise ConfigError("feed_id must be a string")
        return feed_id or self._next_id(enabler_id)

    def _period(self, config: Mapping[str, Any], default: int) -> int:
        period = config.get("period_ms", default)
        if not isinstance(period, int) or isinstance(period, bool) or period < 1:
            raise ConfigError("period_ms must be a positive integer")
        return period

    def _start_accelerometer(self, enabler_id: str, config: Mapping[str, Any]) -> str:
        period = self._period(config, DEFAULT_ACCEL_PERIOD_MS)
        rows = config.get("trace")
        if rows is None:
            path = config.get("trace_path")
            if not path:
                raise ConfigError("accelerometer requires trace_path or an inline trace")
            try:
                rows = load_trace_rows(path)
            except FileNotFoundError as err:
                raise ConfigError(f"trace file not found: {path}") from err
        rows = [tuple(r) for r in rows]
        feed_id = self._feed_id(enabler_id, config)
        desc = accelerometer_template(feed_id)
        self.engine.register_feed(desc, nominal_period_ms=period)
        start = self.engine.clock.now_ms()

        def tick(index: int = 0):
            if feed_id in self._stopped or index >= len(rows):
                return
            t, x, y, z = rows[index]
            at = start + t
            try:
                self.engine.publish(feed_id, {"x": x, "y": y, "z": z}, t_ms=at)
            except UnknownFeed:
                return
            if index + 1 < len(rows):
                self.scheduler.schedule(start + rows[index + 1][0], lambda: tick(index + 1))

        if rows:
            self.scheduler.schedule(start + rows[0][0], tick)
        return feed_id

    def _start_temperature(self, enabler_id: str, config: Mapping[str, Any]) -> str:
        period = self._period(config, 1000)
        base = float(config.get("base_c", 21.0))
        amplitude = float(config.get("amplitude_c", 2.0))
        rng = random.Random(config.get("seed", 0))
        feed_id = self._feed_id(enabler_id, config)
        self.engine.register_feed(temperature_template(feed_id), nominal_period_ms=period)
        start = self.engine.clock.now_ms()

        def tick(step: int = 0):
            if feed_id in self._stopped:
                return
            at = start + step * period
            value = base + amplitude * math.sin(2 * math.pi * (at % 3_600_000) / 3_600_000) + rng.uniform(-0.1, 0.1)
            try:
                self.engine.publish(feed_id, {"temperature": value}, t_ms=at)
            except UnknownFeed:
                return
            self.scheduler.schedule(start + (step + 1) * period, lambda: tick(step + 1))

        self.scheduler.schedule(start, tick)
        return feed_id

    def _start_gps(self, enabler_id: str, config: Mapping[str, Any]) -> str:
        period = self._period(config, 1000)
        lat = float(config.get("start_lat", 60.1699))
        lon = float(config.get("start_lon", 24.9384))
        rng = random.Random(config.get("seed", 0))
        feed_id = self._feed_id(enabler_id, config)
        self.engine.register_feed(gps_template(feed_id), nominal_period_ms=period)
        start = self.engine.clock.now_ms()
        position = {"lat": lat, "lon": lon}

        def tick(step: int = 0):
            if feed_id in self._stopped:
                return
            at = start + step * period
            position["lat"] = max(-90.0, min(90.0, position["lat"] + rng.uniform(-5e-4, 5e-4)))
            position["lon"] = max(-180.0, min(180.0, position["lon"] + rng.uniform(-5e-4, 5e-4)))
            try:
                self.engine.publish(feed_id, {"position": dict(position)}, t_ms=at)
            except UnknownFeed:
                return
            self.scheduler.schedule(start + (step + 1) * period, lambda: tick(step + 1))

        self.scheduler.schedule(start, tick)
        return feed_id

    def _start_switch(self, enabler_id: str, config: Mapping[str, Any]) -> str:
        feed_id = self._feed_id(enabler_id, config)
        desc = switch_template(feed_id)
        self.engine.register_feed(desc)
        self._switches[feed_id] = _SwitchState(field="on", on=False)
        self.engine.publish(feed_id, {"on": False})
        return feed_id

    def stop_feed(self, feed_id: str) -> None:
        self._stopped.add(feed_id)

    def apply_command(self, feed_id: str, command: str, on: bool | None = None, t_ms: int | None = None) -> bool:
        """Apply toggle/set; ``t_ms`` lets trigger rules stamp the event time of the
        sample that fired them, so actuator logs carry exact fire timestamps."""
        desc = self.engine.descriptor(feed_id)  # raises UnknownFeed
        if desc.kind != "atomic_actuator":
            raise NotAnActuator(f"feed {feed_id!r} is not an actuator")
        state = self._switches.get(feed_id)
        if state is None:
            switch_fields = [
                f.name for f in desc.fields
                if f.semantic_type.aggregation_class == "switch_state"
            ]
            latest = self.engine.latest(feed_id)
            current = bool(latest.values[switch_fields[0]]) if latest else False
            state = self._switches.setdefault(feed_id, _SwitchState(field=switch_fields[0], on=current))
        with state.lock:
            if command == "toggle":
                state.on = not state.on
            elif command == "set":
                if not isinstance(on, bool):
                    raise SchemaError("set command requires a boolean 'on'")
                state.on = on
            else:
                raise SchemaError(f"unknown actuator command {command!r}")
            if t_ms is not None:
                # Commands are the only publishers of an actuator feed and are
                # serialized by this lock, so clamping keeps t_ms monotone.
                latest = self.engine.latest(feed_id)
                if latest is not None and t_ms < latest.t_ms:
                    t_ms = latest.t_ms
            # Every accepted command publishes a state sample, even when the
            # state is unchanged: commands are observable events.
            self.engine.publish(feed_id, {state.field: state.on}, t_ms=t_ms)
            return state.on
