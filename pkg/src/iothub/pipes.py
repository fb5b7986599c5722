"""Type checking of pipe specs: walks the operator DAG and synthesizes the derived feed.

The same walk produces a ``PipePlan`` that the dataflow engine reuses to build
its runtime operator instances, so validation and execution can never disagree
about schemas.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .errors import ArityError, ConfigError, EmptyTable, PipeTypeError
from .model import (
    NUMERIC_KINDS,
    FeedDescriptor,
    FieldDescriptor,
    Operator,
    PipeSpec,
    SemanticType,
    TypeRegistry,
    compatible_types,
    default_registry,
    value_matches_kind,
)

OPERATOR_KINDS = frozenset({"filter", "aggregate_window", "resample", "sliding_delta", "anonymize_location"})
# "magnitude" (euclidean norm) is a non-default alternative to sum for axis fusion.
AGGREGATE_FNS = frozenset({"min", "max", "mean", "sum", "count", "magnitude"})
RESAMPLE_STRATEGIES = frozenset({"mean", "last"})
FILTER_OPS = frozenset({"<", "<=", "=", ">=", ">", "!="})
_ORDERING_OPS = frozenset({"<", "<=", ">=", ">"})
# Kinds that admit ordered comparison in filter predicates.
_ORDERABLE_KINDS = frozenset({"decimal", "integer", "text", "timestamp"})

Schema = tuple[FieldDescriptor, ...]


@dataclass(frozen=True)
class NodePlan:
    """One resolved operator: its input schemas, output schema and runtime metadata."""

    op: Operator
    input_schemas: Mapping[str, Schema]
    output_schema: Schema
    meta: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class PipePlan:
    pipe: PipeSpec
    nodes: tuple[NodePlan, ...]
    terminal_ref: str
    output_fields: Schema


def validate_pipe_types(
    pipe: PipeSpec,
    inputs: Sequence[FeedDescriptor],
    *,
    registry: TypeRegistry | None = None,
    feed_id: str | None = None,
    scope: str = "private",
    keywords: Sequence[str] = (),
    owner: str = "",
    created_at: int = 0,
    city_table=None,
) -> FeedDescriptor:
    """Type-check ``pipe`` against its source descriptors and return the derived feed.

    Raises ``ArityError`` on source count mismatch, ``PipeTypeError`` (carrying
    the offending operator id) on field or compatibility violations, and
    ``ConfigError`` for invalid resampling periods.
    """
    plan = build_plan(pipe, inputs, registry=registry, city_table=city_table)
    return derived_descriptor(
        plan,
        feed_id=feed_id,
        scope=scope,
        keywords=keywords,
        owner=owner,
        created_at=created_at,
    )


def derived_descriptor(
    plan: PipePlan,
    *,
    feed_id: str | None = None,
    scope: str = "private",
    keywords: Sequence[str] = (),
    owner: str = "",
    created_at: int = 0,
) -> FeedDescriptor:
    deps: list[str] = []
    for source in plan.pipe.sources:
        if source not in deps:
            deps.append(source)
    return FeedDescriptor(
        id=feed_id if feed_id is not None else "derived-" + uuid.uuid4().hex[:12],
        kind="derived",
        fields=plan.output_fields,
        scope=scope,
        keywords=frozenset(keywords),
        dependencies=tuple(deps),
        pipe=plan.pipe,
        created_at=created_at,
        owner=owner,
    )


def build_plan(
    pipe: PipeSpec,
    inputs: Sequence[FeedDescriptor],
    *,
    registry: TypeRegistry | None = None,
    city_table=None,
) -> PipePlan:
    registry = registry or default_registry()

    if not pipe.sources:
        raise ArityError("pipe requires at least one source")
    if len(inputs) != len(pipe.sources):
        raise ArityError(f"pipe declares {len(pipe.sources)} sources, got {len(inputs)} inputs")

    schemas: dict[str, Schema] = {f"source:{i}": desc.fields for i, desc in enumerate(inputs)}

    if not pipe.operators:
        if len(pipe.sources) != 1:
            raise ArityError("a pipe without operators must have exactly one source")
        if pipe.sink is not None:
            raise PipeTypeError("sink references an operator but the pipe has none")
        return PipePlan(pipe=pipe, nodes=(), terminal_ref="source:0", output_fields=inputs[0].fields)

    by_id: dict[str, Operator] = {}
    for op in pipe.operators:
        if op.id in by_id:
            raise PipeTypeError(f"duplicate operator id {op.id!r}", operator=op.id)
        if op.id.startswith("source:"):
            raise PipeTypeError(f"operator id {op.id!r} shadows a source reference", operator=op.id)
        by_id[op.id] = op

    consumed: set[str] = set()
    for op in pipe.operators:
        if not op.inputs:
            raise PipeTypeError("operator declares no inputs", operator=op.id)
        for ref in op.inputs:
            if ref.startswith("source:"):
                if ref not in schemas:
                    raise PipeTypeError(f"unknown source reference {ref!r}", operator=op.id)
            elif ref not in by_id:
                raise PipeTypeError(f"unknown operator reference {ref!r}", operator=op.id)
            consumed.add(ref)

    for i in range(len(pipe.sources)):
        if f"source:{i}" not in consumed:
            raise PipeTypeError(f"source:{i} is never consumed")

    terminals = [op.id for op in pipe.operators if op.id not in consumed]
    if len(terminals) != 1:
        raise PipeTypeError(f"pipe must have exactly one terminal operator, found {terminals}")
    terminal = terminals[0]
    if pipe.sink is not None and pipe.sink != terminal:
        raise PipeTypeError(f"declared sink {pipe.sink!r} is not the terminal operator {terminal!r}")

    ordered = _topo_order(pipe.operators)
    nodes: list[NodePlan] = []
    for op in ordered:
        input_schemas = {ref: schemas[ref] for ref in op.inputs}
        node = _check_operator(op, input_schemas, registry, city_table)
        schemas[op.id] = node.output_schema
        nodes.append(node)

    return PipePlan(pipe=pipe, nodes=tuple(nodes), terminal_ref=terminal, output_fields=schemas[terminal])


def _topo_order(operators: Sequence[Operator]) -> list[Operator]:
    remaining = {op.id: op for op in operators}
    placed: set[str] = set()
    ordered: list[Operator] = []
    while remaining:
        progressed = False
        for op_id in list(remaining):
            op = remaining[op_id]
            if all(ref.startswith("source:") or ref in placed for ref in op.inputs):
                ordered.append(op)
                placed.add(op_id)
                del remaining[op_id]
                progressed = True
        if not progressed:
            raise PipeTypeError(f"operator graph contains a cycle among {sorted(remaining)}")
    return ordered


def _check_operator(
    op: Operator,
    input_schemas: Mapping[str, Schema],
    registry: TypeRegistry,
    city_table,
) -> NodePlan:
    if op.kind not in OPERATOR_KINDS:
        raise PipeTypeError(f"unknown operator kind {op.kind!r}", operator=op.id)
    if op.kind != "aggregate_window" and len(op.inputs) != 1:
        raise PipeTypeError(f"{op.kind} takes exactly one input", operator=op.id)

    if op.kind == "filter":
        return _check_filter(op, input_schemas)
    if op.kind == "aggregate_window":
        return _check_aggregate(op, input_schemas, registry)
    if op.kind == "resample":
        return _check_resample(op, input_schemas)
    if op.kind == "sliding_delta":
        return _check_delta(op, input_schemas)
    return _check_anonymize(op, input_schemas, city_table)


def _field_or_fail(schema: Schema, name: str, op: Operator) -> FieldDescriptor:
    for f in schema:
        if f.name == name:
            return f
    raise PipeTypeError(f"field {name!r} not present on input", operator=op.id)


def _check_filter(op: Operator, input_schemas: Mapping[str, Schema]) -> NodePlan:
    params = op.params
    name = params.get("field")
    cmp_op = params.get("op")
    if not isinstance(name, str):
        raise PipeTypeError("filter requires a 'field' parameter", operator=op.id)
    if cmp_op not in FILTER_OPS:
        raise PipeTypeError(f"filter op must be one of {sorted(FILTER_OPS)}", operator=op.id)
    if "value" not in params:
        raise PipeTypeError("filter requires a 'value' parameter", operator=op.id)
    schema = input_schemas[op.inputs[0]]
    fd = _field_or_fail(schema, name, op)
    kind = fd.semantic_type.value_kind
    if not value_matches_kind(params["value"], kind):
        raise PipeTypeError(f"filter constant does not match field kind {kind}", operator=op.id)
    if cmp_op in _ORDERING_OPS and kind not in _ORDERABLE_KINDS:
        raise PipeTypeError(f"ordering comparison not defined for kind {kind}", operator=op.id)
    return NodePlan(op=op, input_schemas=dict(input_schemas), output_schema=schema)


def _check_aggregate(op: Operator, input_schemas: Mapping[str, Schema], registry: TypeRegistry) -> NodePlan:
    params = op.params
    fn = params.get("fn")
    names = params.get("fields")
    window_ms = params.get("window_ms", 0)
    if fn not in AGGREGATE_FNS:
        raise PipeTypeError(f"aggregate fn must be one of {sorted(AGGREGATE_FNS)}", operator=op.id)
    if not isinstance(names, (list, tuple)) or not names or not all(isinstance(n, str) for n in names):
        raise PipeTypeError("aggregate requires a nonempty 'fields' list", operator=op.id)
    if not isinstance(window_ms, int) or isinstance(window_ms, bool) or window_ms < 0:
        raise PipeTypeError("aggregate window_ms must be a non-negative integer", operator=op.id)

    # Every listed field must exist with a compatible type in every input.
    typed: list[tuple[str, str, SemanticType]] = []
    for ref in op.inputs:
        for name in names:
            fd = _field_or_fail(input_schemas[ref], name, op)
            typed.append((ref, name, fd.semantic_type))
    for i in range(len(typed)):
        for j in range(i + 1, len(typed)):
            if not compatible_types(typed[i][2], typed[j][2], registry):
                raise PipeTypeError(
                    f"fields {typed[i][1]!r} and {typed[j][1]!r} have incompatible aggregation classes",
                    operator=op.id,
                )
    if fn != "count":
        for _, name, st in typed:
            if st.value_kind not in NUMERIC_KINDS:
                raise PipeTypeError(f"aggregate({fn}) requires numeric fields, {name!r} is {st.value_kind}", operator=op.id)

    cls = typed[0][2].aggregation_class
    target_unit = typed[0][2].unit
    if fn == "count":
        out_type = SemanticType(id=f"count_{cls}", value_kind="integer", unit=None, aggregation_class="generic_count")
    elif fn in ("mean", "magnitude"):
        out_type = SemanticType(id=f"{fn}_{cls}", value_kind="decimal", unit=target_unit, aggregation_class=cls)
    else:
        out_kind = "decimal" if any(st.value_kind == "decimal" for _, _, st in typed) else "integer"
        out_type = SemanticType(id=f"{fn}_{cls}", value_kind=out_kind, unit=target_unit, aggregation_class=cls)
    out_field = FieldDescriptor(name=f"{fn}_{cls}", semantic_type=out_type, access_mode="stored")
    units = {(ref, name): st.unit for ref, name, st in typed}
    meta = {"fn": fn, "fields": tuple(names), "window_ms": window_ms, "target_unit": target_unit, "units": units}
    return NodePlan(op=op, input_schemas=dict(input_schemas), output_schema=(out_field,), meta=meta)


def _check_resample(op: Operator, input_schemas: Mapping[str, Schema]) -> NodePlan:
    params = op.params
    period_ms = params.get("period_ms")
    strategy = params.get("strategy", "mean")
    source_period_ms = params.get("source_period_ms")
    if not isinstance(period_ms, int) or isinstance(period_ms, bool) or period_ms < 1:
        raise PipeTypeError("resample period_ms must be a positive integer", operator=op.id)
    if strategy not in RESAMPLE_STRATEGIES:
        raise PipeTypeError(f"resample strategy must be one of {sorted(RESAMPLE_STRATEGIES)}", operator=op.id)
    if source_period_ms is not None:
        if not isinstance(source_period_ms, int) or isinstance(source_period_ms, bool) or source_period_ms < 1:
            raise PipeTypeError("resample source_period_ms must be a positive integer", operator=op.id)
        if period_ms < source_period_ms:
            raise ConfigError(
                f"resample period {period_ms}ms is below the source period {source_period_ms}ms (upsampling unsupported)",
                operator=op.id,
            )
    schema = input_schemas[op.inputs[0]]
    out_fields = []
    numeric = []
    for fd in schema:
        kind = fd.semantic_type.value_kind
        if strategy == "mean" and kind in NUMERIC_KINDS:
            numeric.append(fd.name)
            fd = replace(fd, semantic_type=replace(fd.semantic_type, value_kind="decimal"), access_mode="stored")
        else:
            fd = replace(fd, access_mode="stored")
        out_fields.append(fd)
    meta = {"period_ms": period_ms, "strategy": strategy, "mean_fields": tuple(numeric)}
    return NodePlan(op=op, input_schemas=dict(input_schemas), output_schema=tuple(out_fields), meta=meta)


def _check_delta(op: Operator, input_schemas: Mapping[str, Schema]) -> NodePlan:
    name = op.params.get("field")
    if not isinstance(name, str):
        raise PipeTypeError("sliding_delta requires a 'field' parameter", operator=op.id)
    schema = input_schemas[op.inputs[0]]
    fd = _field_or_fail(schema, name, op)
    st = fd.semantic_type
    if st.value_kind not in NUMERIC_KINDS:
        raise PipeTypeError(f"sliding_delta requires a numeric field, {name!r} is {st.value_kind}", operator=op.id)
    out_type = SemanticType(id="force", value_kind="decimal", unit=st.unit, aggregation_class=st.aggregation_class)
    out_field = FieldDescriptor(name="force", semantic_type=out_type, access_mode="stored")
    return NodePlan(op=op, input_schemas=dict(input_schemas), output_schema=(out_field,), meta={"field": name})


def _check_anonymize(op: Operator, input_schemas: Mapping[str, Schema], city_table) -> NodePlan:
    schema = input_schemas[op.inputs[0]]
    geo = [f for f in schema if f.semantic_type.value_kind == "geo_point"]
    if len(geo) != 1:
        raise PipeTypeError("anonymize_location requires exactly one geo_point input field", operator=op.id)
    inline = op.params.get("table")
    if inline is not None:
        if not isinstance(inline, (list, tuple)):
            raise PipeTypeError("anonymize_location inline table must be a list", operator=op.id)
        if not inline:
            raise EmptyTable("anonymize_location inline table is empty", operator=op.id)
    elif city_table is not None and len(city_table) == 0:
        raise EmptyTable("configured city table is empty", operator=op.id)
    out_type = SemanticType(id="city", value_kind="text", unit=None, aggregation_class="location")
    out_field = FieldDescriptor(name="city", semantic_type=out_type, access_mode="stored")
    meta = {"geo_field": geo[0].name, "inline_table": tuple(tuple(row) for row in inline) if inline else None}
    return NodePlan(op=op, input_schemas=dict(input_schemas), output_schema=(out_field,), meta=meta)
