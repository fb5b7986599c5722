"""Declarative application engine: requirement binding, trigger rules, lifecycle.

An app package names the feed kinds it needs, pipe templates over those
requirements, and trigger rules with threshold plus cooldown semantics. The
engine interprets packages directly; there is no embedded script runtime.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import (
    AlreadyRunning,
    DuplicateId,
    InvalidPackage,
    NotBound,
    NotRunning,
    SchemaError,
    UnknownResource,
)
from .model import (
    FEED_KINDS,
    FeedDescriptor,
    FieldDescriptor,
    PipeSpec,
    SemanticType,
    TypeRegistry,
    ValidationReport,
    default_registry,
    valid_feed_id,
)
from .pipes import FILTER_OPS, validate_pipe_types

_REQ_REF = re.compile(r"^req:(\d+)$")
_PIPE_REF = re.compile(r"^pipe:(\d+)$")

DEFAULT_SHAKE_THRESHOLD = 5.0
DEFAULT_SHAKE_COOLDOWN_MS = 2000


@dataclass(frozen=True)
class Requirement:
    aggregation_class: str
    kind: str

    def to_json_dict(self) -> dict:
        return {"aggregation_class": self.aggregation_class, "kind": self.kind}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Requirement":
        return cls(aggregation_class=str(data["aggregation_class"]), kind=str(data["kind"]))


@dataclass(frozen=True)
class TriggerRule:
    watch_target: str  # "pipe:<i>" or "req:<i>"
    watch_field: str
    condition_op: str
    cooldown_ms: int
    action_target: str  # "req:<i>", must name an actuator requirement
    command: str  # toggle | set
    condition_value: Any = None
    condition_param: str | None = None
    on: bool | None = None

    def to_json_dict(self) -> dict:
        condition: dict[str, Any] = {"op": self.condition_op}
        if self.condition_param is not None:
            condition["param"] = self.condition_param
        else:
            condition["value"] = self.condition_value
        action: dict[str, Any] = {"target": self.action_target, "command": self.command}
        if self.on is not None:
            action["on"] = self.on
        return {
            "watch": {"target": self.watch_target, "field": self.watch_field},
            "condition": condition,
            "cooldown_ms": self.cooldown_ms,
            "action": action,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "TriggerRule":
        watch = data.get("watch", {})
        condition = data.get("condition", {})
        action = data.get("action", {})
        return cls(
            watch_target=str(watch.get("target", "")),
            watch_field=str(watch.get("field", "")),
            condition_op=str(condition.get("op", "")),
            condition_value=condition.get("value"),
            condition_param=condition.get("param"),
            cooldown_ms=data.get("cooldown_ms", 0),
            action_target=str(action.get("target", "")),
            command=str(action.get("command", "")),
            on=action.get("on"),
        )


@dataclass(frozen=True)
class AppPackage:
    app_id: str
    name: str
    version: str
    requires: tuple[Requirement, ...]
    pipes: tuple[PipeSpec, ...] = ()
    rules: tuple[TriggerRule, ...] = ()
    params: Mapping[str, Any] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "name": self.name,
            "version": self.version,
            "requires": [r.to_json_dict() for r in self.requires],
            "pipes": [p.to_json_dict() for p in self.pipes],
            "rules": [r.to_json_dict() for r in self.rules],
            "params": dict(self.params),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "AppPackage":
        for key in ("app_id", "name", "version", "requires"):
            if key not in data:
                raise SchemaError(f"app package missing key {key!r}")
        return cls(
            app_id=str(data["app_id"]),
            name=str(data["name"]),
            version=str(data["version"]),
            requires=tuple(Requirement.from_json_dict(r) for r in data["requires"]),
            pipes=tuple(PipeSpec.from_json_dict(p) for p in data.get("pipes", ())),
            rules=tuple(TriggerRule.from_json_dict(r) for r in data.get("rules", ())),
            params=dict(data.get("params", {})),
        )


# Canonical single-feed shapes used to type-check pipe templates before any
# real feed is bound.
_CLASS_FIELDS: dict[str, tuple[tuple[str, str, str | None], ...]] = {
    "temperature": (("temperature", "decimal", "celsius"),),
    "relative_humidity": (("humidity", "decimal", "percent"),),
    "acceleration": (("x", "decimal", "m_per_s2"), ("y", "decimal", "m_per_s2"), ("z", "decimal", "m_per_s2")),
    "location": (("position", "geo_point", None),),
    "switch_state": (("on", "boolean", None),),
    "generic_count": (("count", "integer", None),),
}


def representative_descriptor(aggregation_class: str, kind: str, feed_id: str = "representative") -> FeedDescriptor:
    """A stand-in descriptor for one requirement, used during static validation."""
    shapes = _CLASS_FIELDS.get(aggregation_class)
    if shapes is None:
        shapes = ((aggregation_class, "decimal", None),)
    access = "stored" if kind == "time_series" else "live"
    fields = [
        FieldDescriptor(
            name=name,
            semantic_type=SemanticType(id=name, value_kind=value_kind, unit=unit, aggregation_class=aggregation_class),
            access_mode=access,
            keywords=frozenset({aggregation_class}),
        )
        for name, value_kind, unit in shapes
    ]
    if kind == "time_series":
        fields.insert(
            0,
            FieldDescriptor(
                name="at",
                semantic_type=SemanticType(id="time", value_kind="timestamp", unit="ms", aggregation_class="time"),
                access_mode="stored",
            ),
        )
    return FeedDescriptor(id=feed_id, kind=kind, fields=tuple(fields))


def validate_app_static(pkg: AppPackage, registry: TypeRegistry | None = None) -> ValidationReport:
    """Structural and type checks that do not need any real feed."""
    registry = registry or default_registry()
    out: list[str] = []

    if not valid_feed_id(pkg.app_id):
        out.append(f"invalid app_id {pkg.app_id!r}")
    if not pkg.name:
        out.append("name empty")
    if not pkg.version:
        out.append("version empty")

    representatives: list[FeedDescriptor | None] = []
    for i, req in enumerate(pkg.requires):
        ok = True
        if req.kind not in FEED_KINDS or req.kind == "derived":
            out.append(f"requirement {i}: unsupported kind {req.kind!r}")
            ok = False
        if not registry.knows_class(req.aggregation_class):
            out.append(f"requirement {i}: unknown aggregation_class {req.aggregation_class!r}")
            ok = False
        representatives.append(representative_descriptor(req.aggregation_class, req.kind, f"req-{i}") if ok else None)

    pipe_schemas: list[tuple[FieldDescriptor, ...] | None] = []
    for i, pipe in enumerate(pkg.pipes):
        inputs: list[FeedDescriptor] = []
        bad = False
        for source in pipe.sources:
            match = _REQ_REF.match(source)
            if not match or int(match.group(1)) >= len(pkg.requires):
                out.append(f"pipe {i}: source {source!r} does not resolve to a requirement")
                bad = True
                continue
            rep = representatives[int(match.group(1))]
            if rep is None:
                bad = True
                continue
            inputs.append(rep)
        if bad:
            pipe_schemas.append(None)
            continue
        try:
            desc = validate_pipe_types(pipe, inputs, registry=registry, feed_id=f"pipe-{i}")
        except Exception as err:  # noqa: BLE001 - every pipe defect becomes a report line
            out.append(f"pipe {i}: {err}")
            pipe_schemas.append(None)
        else:
            pipe_schemas.append(desc.fields)

    for i, rule in enumerate(pkg.rules):
        schema = None
        pipe_match = _PIPE_REF.match(rule.watch_target)
        req_match = _REQ_REF.match(rule.watch_target)
        if pipe_match and int(pipe_match.group(1)) < len(pkg.pipes):
            schema = pipe_schemas[int(pipe_match.group(1))]
        elif req_match and int(req_match.group(1)) < len(pkg.requires):
            rep = representatives[int(req_match.group(1))]
            schema = rep.fields if rep is not None else None
        else:
            out.append(f"rule {i}: watch target {rule.watch_target!r} is not a pipe output or requirement")
        if schema is not None:
            watched = next((f for f in schema if f.name == rule.watch_field), None)
            if watched is None:
                out.append(f"rule {i}: watched field {rule.watch_field!r} missing from target")
            elif watched.semantic_type.value_kind not in ("decimal", "integer", "boolean"):
                out.append(f"rule {i}: watched field must be numeric or boolean")

        if rule.condition_op not in FILTER_OPS:
            out.append(f"rule {i}: unknown condition op {rule.condition_op!r}")
        if rule.condition_param is not None:
            if rule.condition_param not in pkg.params:
                out.append(f"rule {i}: condition references unknown param {rule.condition_param!r}")
        elif rule.condition_value is None:
            out.append(f"rule {i}: condition needs a value or a param")

        if not isinstance(rule.cooldown_ms, int) or isinstance(rule.cooldown_ms, bool) or rule.cooldown_ms < 0:
            out.append(f"rule {i}: cooldown_ms must be a non-negative integer")

        action_match = _REQ_REF.match(rule.action_target)
        if not action_match or int(action_match.group(1)) >= len(pkg.requires):
            out.append(f"rule {i}: action target {rule.action_target!r} is not a requirement")
        elif pkg.requires[int(action_match.group(1))].kind != "atomic_actuator":
            out.append(f"rule {i}: action target must be an atomic_actuator requirement")
        if rule.command not in ("toggle", "set"):
            out.append(f"rule {i}: unknown command {rule.command!r}")
        if rule.command == "set" and not isinstance(rule.on, bool):
            out.append(f"rule {i}: set command requires a boolean 'on'")

    return ValidationReport(tuple(out))


def evaluate_rule(rule: TriggerRule, params: Mapping[str, Any], values: Mapping[str, Any], now_ms: int, last_fired_ms: int | None) -> str:
    """Threshold plus cooldown decision: ``fire``, ``suppress`` or ``no_match``.

    The condition is evaluated strictly as written; a matching sample inside
    the cooldown window is suppressed, not buffered.
    """
    if rule.watch_field not in values:
        return "no_match"
    threshold = params[rule.condition_param] if rule.condition_param is not None else rule.condition_value
    observed = values[rule.watch_field]
    op = rule.condition_op
    if op == "<":
        holds = observed < threshold
    elif op == "<=":
        holds = observed <= threshold
    elif op == "=":
        holds = observed == threshold
    elif op == ">=":
        holds = observed >= threshold
    elif op == ">":
        holds = observed > threshold
    else:
        holds = observed != threshold
    if not holds:
        return "no_match"
    if last_fired_ms is not None and now_ms - last_fired_ms < rule.cooldown_ms:
        return "suppress"
    return "fire"


@dataclass
class AppStatus:
    app_id: str
    state: str  # installed | unsatisfied | running | stopped | failed
    bound_feeds: dict[str, str]
    fire_count: int = 0
    last_fired_ms: int | None = None
    missing: tuple[str, ...] = ()
    diagnostic: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "state": self.state,
            "bound_feeds": dict(self.bound_feeds),
            "fire_count": self.fire_count,
            "last_fired_ms": self.last_fired_ms,
            "missing": list(self.missing),
            "diagnostic": self.diagnostic,
        }


class _RuleState:
    __slots__ = ("last_fired_ms", "fire_count")

    def __init__(self):
        self.last_fired_ms: int | None = None
        self.fire_count = 0


class _AppRecord:
    def __init__(self, pkg: AppPackage):
        self.pkg = pkg
        self.state = "installed"
        self.bound: dict[str, str] = {}
        self.missing: tuple[str, ...] = ()
        self.diagnostic: str | None = None
        self.rule_states: list[_RuleState] = []
        self.sub_ids: list[str] = []
        self.derived_ids: list[str] = []
        self.lock = threading.RLock()


class AppEngine:
    """Installs, binds and runs app packages against one hub's feed registry."""

    def __init__(self, engine, devices, registry: TypeRegistry | None = None):
        self.engine = engine
        self.devices = devices
        self.registry = registry or engine.registry
        self._apps: dict[str, _AppRecord] = {}

    def install(self, pkg: AppPackage) -> AppStatus:
        report = validate_app_static(pkg, self.registry)
        if not report.ok:
            raise InvalidPackage("app package fails validation", violations=list(report.violations))
        if pkg.app_id in self._apps:
            raise DuplicateId(f"app {pkg.app_id!r} already installed")
        record = _AppRecord(pkg)
        self._bind(record)
        self._apps[pkg.app_id] = record
        return self.status(pkg.app_id)

    def _bind(self, record: _AppRecord) -> None:
        bound: dict[str, str] = {}
        missing: list[str] = []
        for i, req in enumerate(record.pkg.requires):
            candidates = [
                desc for desc in self.engine.descriptors()
                if desc.kind == req.kind
                and any(f.semantic_type.aggregation_class == req.aggregation_class for f in desc.fields)
                and self.engine.owner_app(desc.id) is None
            ]
            if not candidates:
                missing.append(f"req:{i}")
                continue
            chosen = min(candidates, key=lambda d: (d.created_at, self.engine.registration_index(d.id)))
            bound[f"req:{i}"] = chosen.id
        record.bound = bound
        record.missing = tuple(missing)
        record.state = "unsatisfied" if missing else "installed"

    def bind(self, app_id: str) -> AppStatus:
        record = self._record(app_id)
        with record.lock:
            if record.state not in ("running",):
                self._bind(record)
        return self.status(app_id)

    def start(self, app_id: str) -> AppStatus:
        record = self._record(app_id)
        with record.lock:
            if record.state == "running":
                raise AlreadyRunning(f"app {app_id!r} is already running")
            self._bind(record)
            if record.state == "unsatisfied":
                raise NotBound(f"app {app_id!r} has unmet requirements", missing=list(record.missing))

            record.derived_ids = []
            for i, template in enumerate(record.pkg.pipes):
                resolved = PipeSpec(
                    sources=tuple(record.bound[s] for s in template.sources),
                    operators=template.operators,
                    sink=template.sink,
                )
                derived_id = f"{app_id}.p{i}"
                self.engine.create_derived_feed(resolved, feed_id=derived_id, owner_app=app_id)
                record.derived_ids.append(derived_id)

            record.rule_states = [_RuleState() for _ in record.pkg.rules]
            record.sub_ids = []
            for i, rule in enumerate(record.pkg.rules):
                feed_id = self._resolve_watch(record, rule.watch_target)
                handler = _RuleHandler(self, record, rule, record.rule_states[i])
                sub = self.engine.subscribe_callback(feed_id, handler)
                record.sub_ids.append(sub.id)
            record.diagnostic = None
            record.state = "running"
        return self.status(app_id)

    def _resolve_watch(self, record: _AppRecord, target: str) -> str:
        pipe_match = _PIPE_REF.match(target)
        if pipe_match:
            return record.derived_ids[int(pipe_match.group(1))]
        return record.bound[target]

    def stop(self, app_id: str) -> AppStatus:
        record = self._record(app_id)
        with record.lock:
            if record.state != "running":
                raise NotRunning(f"app {app_id!r} is not running")
            self._teardown(record)
            record.state = "stopped"
        return self.status(app_id)

    def _teardown(self, record: _AppRecord) -> None:
        for sub_id in record.sub_ids:
            try:
                self.engine.unsubscribe(sub_id)
            except UnknownResource:
                pass
        record.sub_ids = []
        for derived_id in reversed(record.derived_ids):
            if self.engine.has_feed(derived_id):
                self.engine.remove_feed(derived_id)
        record.derived_ids = []

    def status(self, app_id: str) -> AppStatus:
        record = self._record(app_id)
        fire_count = sum(rs.fire_count for rs in record.rule_states)
        fired = [rs.last_fired_ms for rs in record.rule_states if rs.last_fired_ms is not None]
        return AppStatus(
            app_id=app_id,
            state=record.state,
            bound_feeds=dict(record.bound),
            fire_count=fire_count,
            last_fired_ms=max(fired) if fired else None,
            missing=record.missing,
            diagnostic=record.diagnostic,
        )

    def app_ids(self) -> list[str]:
        return sorted(self._apps)

    def _record(self, app_id: str) -> _AppRecord:
        record = self._apps.get(app_id)
        if record is None:
            raise UnknownResource(f"unknown app {app_id!r}")
        return record

    def _fail(self, record: _AppRecord, diagnostic: str) -> None:
        record.diagnostic = diagnostic
        self._teardown(record)
        record.state = "failed"


class _RuleHandler:
    """Evaluates one rule against its watched feed, in sample order."""

    __slots__ = ("apps", "record", "rule", "state")

    def __init__(self, apps: AppEngine, record: _AppRecord, rule: TriggerRule, state: _RuleState):
        self.apps = apps
        self.record = record
        self.rule = rule
        self.state = state

    def __call__(self, sample) -> None:
        if self.record.state != "running":
            return
        outcome = evaluate_rule(
            self.rule, self.record.pkg.params, sample.values, sample.t_ms, self.state.last_fired_ms
        )
        if outcome != "fire":
            return
        actuator = self.record.bound[self.rule.action_target]
        try:
            self.apps.devices.apply_command(actuator, self.rule.command, self.rule.on, t_ms=sample.t_ms)
        except Exception as err:  # noqa: BLE001 - any action failure marks the app failed
            self.apps._fail(self.record, f"action on {actuator} failed: {err}")
            return
        self.state.last_fired_ms = sample.t_ms
        self.state.fire_count += 1


def shake_app_package(
    threshold: float = DEFAULT_SHAKE_THRESHOLD,
    cooldown_ms: int = DEFAULT_SHAKE_COOLDOWN_MS,
) -> AppPackage:
    """The reference shake-to-toggle application.

    Sums the accelerometer axes per sample, takes the absolute delta between
    consecutive sums as the force signal, and toggles the switch when the
    force crosses the threshold, with a cooldown between firings.
    """
    from .model import Operator

    pipe = PipeSpec(
        sources=("req:0",),
        operators=(
            Operator(
                id="axis_sum",
                kind="aggregate_window",
                params={"fn": "sum", "fields": ["x", "y", "z"], "window_ms": 0},
                inputs=("source:0",),
            ),
            Operator(id="force", kind="sliding_delta", params={"field": "sum_acceleration"}, inputs=("axis_sum",)),
        ),
        sink="force",
    )
    rule = TriggerRule(
        watch_target="pipe:0",
        watch_field="force",
        condition_op=">",
        condition_param="threshold",
        cooldown_ms=cooldown_ms,
        action_target="req:1",
        command="toggle",
    )
    return AppPackage(
        app_id="shake-to-toggle",
        name="Shake to toggle",
        version="1.0.0",
        requires=(
            Requirement(aggregation_class="acceleration", kind="atomic_sensor"),
            Requirement(aggregation_class="switch_state", kind="atomic_actuator"),
        ),
        pipes=(pipe,),
        rules=(rule,),
        params={"threshold": threshold},
    )
