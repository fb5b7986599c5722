"""Feed model: semantic types, descriptors, scopes, compatibility and validation rules.

Everything in this module is immutable value logic with no I/O. The JSON
dictionaries produced by ``to_json_dict`` methods are the canonical wire
representation shared by the hub and meta-hub APIs.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

from .errors import InvalidDescriptor, SchemaError

VALUE_KINDS = frozenset({"decimal", "integer", "boolean", "text", "geo_point", "timestamp"})
NUMERIC_KINDS = frozenset({"decimal", "integer"})
ACCESS_MODES = frozenset({"live", "stored"})
FEED_KINDS = frozenset({"atomic_sensor", "atomic_actuator", "time_series", "derived"})

SCOPES = ("private", "hub", "global")
_SCOPE_RANK = {name: rank for rank, name in enumerate(SCOPES)}

# Feed ids double as log file names; keep them path-safe.
_FEED_ID_RE = re.compile(r"^[A-Za-z0-9._-]{1,128}$")


def scope_rank(scope: str) -> int:
    if scope not in _SCOPE_RANK:
        raise SchemaError(f"unknown scope {scope!r}")
    return _SCOPE_RANK[scope]


def valid_feed_id(feed_id: Any) -> bool:
    return isinstance(feed_id, str) and bool(_FEED_ID_RE.match(feed_id))


class TypeRegistry:
    """Closed registry of aggregation classes and unit conversions.

    Seeded with the built-in physical quantity families; deployments may
    register additional classes and conversions before feeds are created.
    """

    DEFAULT_CLASSES = (
        "temperature",
        "relative_humidity",
        "acceleration",
        "location",
        "switch_state",
        "time",
        "generic_count",
    )

    def __init__(self, extra_classes: Iterable[str] = ()):
        self._classes = set(self.DEFAULT_CLASSES)
        self._classes.update(extra_classes)
        self._conversions: dict[tuple[str, str], Callable[[float], float]] = {}
        self.register_conversion("celsius", "kelvin", lambda v: v + 273.15)
        self.register_conversion("kelvin", "celsius", lambda v: v - 273.15)

    def register_class(self, name: str) -> None:
        self._classes.add(name)

    def knows_class(self, name: str) -> bool:
        return name in self._classes

    def register_conversion(self, from_unit: str, to_unit: str, fn: Callable[[float], float]) -> None:
        self._conversions[(from_unit, to_unit)] = fn

    def has_conversion(self, a: str | None, b: str | None) -> bool:
        if a is None or b is None:
            return False
        return (a, b) in self._conversions or (b, a) in self._conversions

    def convert(self, value: float, from_unit: str | None, to_unit: str | None) -> float:
        if from_unit == to_unit:
            return value
        fn = self._conversions.get((from_unit, to_unit))
        if fn is None:
            raise SchemaError(f"no conversion {from_unit} -> {to_unit}")
        return fn(value)


_DEFAULT_REGISTRY = TypeRegistry()


def default_registry() -> TypeRegistry:
    return _DEFAULT_REGISTRY


@dataclass(frozen=True)
class SemanticType:
    """Value kind plus unit plus the physical quantity family it aggregates within."""

    id: str
    value_kind: str
    unit: str | None
    aggregation_class: str

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "value_kind": self.value_kind,
            "unit": self.unit,
            "aggregation_class": self.aggregation_class,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "SemanticType":
        _require_keys(data, ("id", "value_kind", "unit", "aggregation_class"), "semantic_type")
        return cls(
            id=_require_str(data["id"], "semantic_type.id"),
            value_kind=_require_str(data["value_kind"], "semantic_type.value_kind"),
            unit=data["unit"] if data["unit"] is None else _require_str(data["unit"], "semantic_type.unit"),
            aggregation_class=_require_str(data["aggregation_class"], "semantic_type.aggregation_class"),
        )

    def violations(self, registry: TypeRegistry) -> list[str]:
        out = []
        if not self.id:
            out.append("semantic type id empty")
        if self.value_kind not in VALUE_KINDS:
            out.append(f"unknown value_kind {self.value_kind!r}")
        if not registry.knows_class(self.aggregation_class):
            out.append(f"unknown aggregation_class {self.aggregation_class!r}")
        if self.value_kind == "geo_point" and self.aggregation_class != "location":
            out.append("geo_point values must have aggregation_class location")
        if self.value_kind == "timestamp" and self.aggregation_class != "time":
            out.append("timestamp values must have aggregation_class time")
        return out


def compatible_types(a: SemanticType, b: SemanticType, registry: TypeRegistry | None = None) -> bool:
    """True iff values of the two types may be aggregated together.

    Same quantity family and same value kind are required; differing units
    are only acceptable when a conversion is registered between them.
    """
    registry = registry or _DEFAULT_REGISTRY
    if a.aggregation_class != b.aggregation_class:
        return False
    if a.value_kind != b.value_kind:
        return False
    if a.unit == b.unit:
        return True
    return registry.has_conversion(a.unit, b.unit)


@dataclass(frozen=True)
class FieldDescriptor:
    """One named, typed field of a feed."""

    name: str
    semantic_type: SemanticType
    access_mode: str
    keywords: frozenset[str] = frozenset()

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "semantic_type": self.semantic_type.to_json_dict(),
            "access_mode": self.access_mode,
            "keywords": sorted(self.keywords),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "FieldDescriptor":
        _require_keys(data, ("name", "semantic_type", "access_mode"), "field")
        keywords = data.get("keywords", [])
        if not isinstance(keywords, (list, tuple)):
            raise SchemaError("field.keywords must be a list")
        return cls(
            name=_require_str(data["name"], "field.name"),
            semantic_type=SemanticType.from_json_dict(_require_mapping(data["semantic_type"], "field.semantic_type")),
            access_mode=_require_str(data["access_mode"], "field.access_mode"),
            keywords=frozenset(_require_str(k, "field.keyword") for k in keywords),
        )


@dataclass(frozen=True)
class Operator:
    """One node of a pipe DAG; ``inputs`` reference sources ("source:<i>") or other operators."""

    id: str
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    inputs: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "params": dict(self.params),
            "inputs": list(self.inputs),
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Operator":
        _require_keys(data, ("id", "kind"), "operator")
        inputs = data.get("inputs", [])
        if not isinstance(inputs, (list, tuple)):
            raise SchemaError("operator.inputs must be a list")
        params = data.get("params", {})
        return cls(
            id=_require_str(data["id"], "operator.id"),
            kind=_require_str(data["kind"], "operator.kind"),
            params=dict(_require_mapping(params, "operator.params")),
            inputs=tuple(_require_str(ref, "operator.input") for ref in inputs),
        )


@dataclass(frozen=True)
class PipeSpec:
    """A DAG of operators deriving a new feed from one or more source feeds."""

    sources: tuple[str, ...]
    operators: tuple[Operator, ...] = ()
    sink: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "sources": list(self.sources),
            "operators": [op.to_json_dict() for op in self.operators],
            "sink": self.sink,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "PipeSpec":
        _require_keys(data, ("sources",), "pipe")
        sources = data["sources"]
        if not isinstance(sources, (list, tuple)):
            raise SchemaError("pipe.sources must be a list")
        operators = data.get("operators", [])
        if not isinstance(operators, (list, tuple)):
            raise SchemaError("pipe.operators must be a list")
        sink = data.get("sink")
        return cls(
            sources=tuple(_require_str(s, "pipe.source") for s in sources),
            operators=tuple(Operator.from_json_dict(_require_mapping(o, "pipe.operator")) for o in operators),
            sink=sink if sink is None else _require_str(sink, "pipe.sink"),
        )


@dataclass(frozen=True)
class FeedDescriptor:
    """Metadata marshaling one IoT feed: its kind, typed fields, scope and lineage."""

    id: str
    kind: str
    fields: tuple[FieldDescriptor, ...]
    scope: str = "private"
    keywords: frozenset[str] = frozenset()
    dependencies: tuple[str, ...] = ()
    pipe: PipeSpec | None = None
    created_at: int = 0
    owner: str = ""

    def field_map(self) -> dict[str, FieldDescriptor]:
        return {f.name: f for f in self.fields}

    def has_stored_fields(self) -> bool:
        return any(f.access_mode == "stored" for f in self.fields)

    def with_scope(self, scope: str) -> "FeedDescriptor":
        return replace(self, scope=scope)

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "fields": [f.to_json_dict() for f in self.fields],
            "scope": self.scope,
            "keywords": sorted(self.keywords),
            "dependencies": list(self.dependencies),
            "pipe": self.pipe.to_json_dict() if self.pipe is not None else None,
            "created_at": self.created_at,
            "owner": self.owner,
        }

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "FeedDescriptor":
        _require_keys(data, ("id", "kind", "fields", "scope"), "descriptor")
        fields = data["fields"]
        if not isinstance(fields, (list, tuple)):
            raise SchemaError("descriptor.fields must be a list")
        keywords = data.get("keywords", [])
        if not isinstance(keywords, (list, tuple)):
            raise SchemaError("descriptor.keywords must be a list")
        dependencies = data.get("dependencies", [])
        if not isinstance(dependencies, (list, tuple)):
            raise SchemaError("descriptor.dependencies must be a list")
        pipe = data.get("pipe")
        created_at = data.get("created_at", 0)
        if not isinstance(created_at, int) or isinstance(created_at, bool):
            raise SchemaError("descriptor.created_at must be an integer")
        return cls(
            id=_require_str(data["id"], "descriptor.id"),
            kind=_require_str(data["kind"], "descriptor.kind"),
            fields=tuple(FieldDescriptor.from_json_dict(_require_mapping(f, "descriptor.field")) for f in fields),
            scope=_require_str(data["scope"], "descriptor.scope"),
            keywords=frozenset(_require_str(k, "descriptor.keyword") for k in keywords),
            dependencies=tuple(_require_str(d, "descriptor.dependency") for d in dependencies),
            pipe=None if pipe is None else PipeSpec.from_json_dict(_require_mapping(pipe, "descriptor.pipe")),
            created_at=created_at,
            owner=_require_str(data.get("owner", ""), "descriptor.owner"),
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_feed(desc: FeedDescriptor, registry: TypeRegistry | None = None) -> ValidationReport:
    """Check every descriptor invariant; the report lists each violation found."""
    registry = registry or _DEFAULT_REGISTRY
    out: list[str] = []

    if not valid_feed_id(desc.id):
        out.append(f"invalid feed id {desc.id!r}")
    if desc.kind not in FEED_KINDS:
        out.append(f"unknown feed kind {desc.kind!r}")
    if desc.scope not in _SCOPE_RANK:
        out.append(f"unknown scope {desc.scope!r}")
    if not desc.fields:
        out.append("feed requires at least one field")

    seen: set[str] = set()
    for f in desc.fields:
        if not f.name:
            out.append("field name empty")
        elif f.name in seen:
            out.append(f"duplicate field name {f.name!r}")
        seen.add(f.name)
        if f.access_mode not in ACCESS_MODES:
            out.append(f"field {f.name!r}: unknown access_mode {f.access_mode!r}")
        out.extend(f"field {f.name!r}: {v}" for v in f.semantic_type.violations(registry))

    ts_fields = [f for f in desc.fields if f.semantic_type.value_kind == "timestamp"]
    live_fields = [f for f in desc.fields if f.access_mode == "live"]

    if desc.kind == "time_series":
        if len(ts_fields) != 1:
            out.append("time-series feed requires exactly one timestamp field")
        for f in live_fields:
            out.append(f"live field in time-series feed: {f.name!r}")
    elif desc.kind in ("atomic_sensor", "atomic_actuator"):
        for f in desc.fields:
            if f.access_mode != "live":
                out.append(f"stored field in atomic feed: {f.name!r}")
        for f in ts_fields:
            out.append(f"timestamp field in atomic feed: {f.name!r}")
        if desc.kind == "atomic_actuator":
            switches = [
                f for f in desc.fields
                if f.semantic_type.aggregation_class == "switch_state"
                and f.semantic_type.value_kind == "boolean"
            ]
            if len(switches) != 1:
                out.append("actuator feed requires exactly one boolean switch_state field")

    if desc.kind == "derived":
        if not desc.dependencies:
            out.append("derived feed requires dependencies")
        if desc.pipe is None:
            out.append("derived feed requires a pipe")
    else:
        if desc.dependencies:
            out.append(f"{desc.kind} feed must not declare dependencies")
        if desc.pipe is not None:
            out.append(f"{desc.kind} feed must not carry a pipe")

    return ValidationReport(tuple(out))


def canonical_json(obj: Any) -> bytes:
    """UTF-8 JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def descriptor_hash(desc: FeedDescriptor, registry: TypeRegistry | None = None) -> str:
    """Content hash of the canonical descriptor form, excluding ``created_at``.

    Field lists are sorted by name so declaration order does not affect
    identity; equal descriptors modulo ``created_at`` hash identically.
    """
    report = validate_feed(desc, registry)
    if not report.ok:
        raise InvalidDescriptor("descriptor fails validation", violations=list(report.violations))
    payload = desc.to_json_dict()
    del payload["created_at"]
    payload["fields"] = sorted(payload["fields"], key=lambda f: f["name"])
    return hashlib.sha256(canonical_json(payload)).hexdigest()


@dataclass(frozen=True, eq=True, unsafe_hash=False)
class Sample:
    """One timestamped record of field values flowing through the bus."""

    feed_id: str
    seq: int
    t_ms: int
    values: Mapping[str, Any]

    def to_json_dict(self) -> dict:
        return {"feed_id": self.feed_id, "seq": self.seq, "t_ms": self.t_ms, "values": dict(self.values)}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "Sample":
        _require_keys(data, ("feed_id", "seq", "t_ms", "values"), "sample")
        seq, t_ms = data["seq"], data["t_ms"]
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise SchemaError("sample.seq must be an integer")
        if not isinstance(t_ms, int) or isinstance(t_ms, bool):
            raise SchemaError("sample.t_ms must be an integer")
        return cls(
            feed_id=_require_str(data["feed_id"], "sample.feed_id"),
            seq=seq,
            t_ms=t_ms,
            values=dict(_require_mapping(data["values"], "sample.values")),
        )


def value_matches_kind(value: Any, kind: str) -> bool:
    if kind == "decimal":
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "text":
        return isinstance(value, str)
    if kind == "timestamp":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "geo_point":
        if not isinstance(value, Mapping) or set(value.keys()) != {"lat", "lon"}:
            return False
        lat, lon = value["lat"], value["lon"]
        for v in (lat, lon):
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                return False
        return -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0
    return False


def sample_violations(desc: FeedDescriptor, values: Mapping[str, Any]) -> list[str]:
    """Schema check of a value map against a feed's declared fields."""
    out: list[str] = []
    declared = desc.field_map()
    for name in values:
        if name not in declared:
            out.append(f"unexpected field {name!r}")
    for name, fd in declared.items():
        if name not in values:
            out.append(f"missing field {name!r}")
        elif not value_matches_kind(values[name], fd.semantic_type.value_kind):
            out.append(f"field {name!r} does not match kind {fd.semantic_type.value_kind}")
    return out


def _require_keys(data: Mapping[str, Any], keys: Iterable[str], where: str) -> None:
    if not isinstance(data, Mapping):
        raise SchemaError(f"{where} must be an object")
    for key in keys:
        if key not in data:
            raise SchemaError(f"{where} missing key {key!r}")


def _require_str(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where} must be a string")
    return value


def _require_mapping(value: Any, where: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise SchemaError(f"{where} must be an object")
    return value
