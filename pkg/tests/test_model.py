from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, strategies as st

from iothub.errors import InvalidDescriptor, SchemaError
from iothub.model import (
    FeedDescriptor,
    Sample,
    SemanticType,
    TypeRegistry,
    canonical_json,
    compatible_types,
    descriptor_hash,
    sample_violations,
    validate_feed,
    value_matches_kind,
)

from .conftest import (
    accel_feed,
    combo_feed,
    gps_feed,
    live,
    series_feed,
    st_acceleration,
    st_humidity,
    st_switch,
    st_temperature,
    st_timestamp,
    stored,
    switch_feed,
    temp_feed,
)


class TestCompatibleTypes:
    def test_temperature_vs_humidity_incompatible(self):
        assert compatible_types(st_temperature(), st_humidity()) is False

    def test_identity(self):
        assert compatible_types(st_temperature(), st_temperature()) is True

    def test_acceleration_axes(self):
        assert compatible_types(st_acceleration(), st_acceleration()) is True

    def test_celsius_kelvin_conversion_registered(self):
        assert compatible_types(st_temperature("celsius"), st_temperature("kelvin")) is True

    def test_unregistered_unit_pair_incompatible(self):
        assert compatible_types(st_temperature("celsius"), st_temperature("fahrenheit")) is False

    def test_same_class_different_kind_incompatible(self):
        a = st_temperature()
        b = dataclasses.replace(a, value_kind="integer")
        assert compatible_types(a, b) is False

    @given(
        st.builds(
            SemanticType,
            id=st.just("t"),
            value_kind=st.sampled_from(["decimal", "integer", "boolean", "text", "geo_point", "timestamp"]),
            unit=st.sampled_from([None, "celsius", "kelvin", "percent", "m_per_s2"]),
            aggregation_class=st.sampled_from(["temperature", "relative_humidity", "acceleration", "location", "time"]),
        ),
        st.builds(
            SemanticType,
            id=st.just("u"),
            value_kind=st.sampled_from(["decimal", "integer", "boolean", "text", "geo_point", "timestamp"]),
            unit=st.sampled_from([None, "celsius", "kelvin", "percent", "m_per_s2"]),
            aggregation_class=st.sampled_from(["temperature", "relative_humidity", "acceleration", "location", "time"]),
        ),
    )
    def test_symmetric_and_reflexive(self, a, b):
        assert compatible_types(a, b) == compatible_types(b, a)
        assert compatible_types(a, a) is True


class TestValidateFeed:
    def test_minimal_sensor_ok(self):
        assert validate_feed(accel_feed()).ok

    def test_live_field_in_time_series(self):
        desc = series_feed()
        desc = dataclasses.replace(
            desc, fields=desc.fields + (live("spot", st_temperature()),)
        )
        report = validate_feed(desc)
        assert not report.ok
        assert any("live field in time-series feed" in v for v in report.violations)

    def test_derived_requires_dependencies(self):
        desc = dataclasses.replace(accel_feed(), kind="derived", dependencies=())
        report = validate_feed(desc)
        assert any("derived feed requires dependencies" in v for v in report.violations)

    def test_time_series_requires_single_timestamp(self):
        desc = dataclasses.replace(series_feed(), fields=(stored("temperature", st_temperature()),))
        report = validate_feed(desc)
        assert any("exactly one timestamp" in v for v in report.violations)

    def test_atomic_rejects_stored_and_timestamp_fields(self):
        desc = dataclasses.replace(
            accel_feed(), fields=accel_feed().fields + (stored("at", st_timestamp()),)
        )
        report = validate_feed(desc)
        assert any("stored field in atomic feed" in v for v in report.violations)
        assert any("timestamp field in atomic feed" in v for v in report.violations)

    def test_actuator_needs_exactly_one_switch_field(self):
        desc = switch_feed()
        assert validate_feed(desc).ok
        doubled = dataclasses.replace(desc, fields=desc.fields + (live("on2", st_switch()),))
        report = validate_feed(doubled)
        assert any("exactly one boolean switch_state field" in v for v in report.violations)

    def test_duplicate_field_names(self):
        desc = dataclasses.replace(temp_feed(), fields=temp_feed().fields * 2)
        report = validate_feed(desc)
        assert any("duplicate field name" in v for v in report.violations)

    def test_empty_fields(self):
        desc = dataclasses.replace(temp_feed(), fields=())
        assert not validate_feed(desc).ok

    def test_geo_point_requires_location_class(self):
        bad = SemanticType(id="g", value_kind="geo_point", unit=None, aggregation_class="temperature")
        desc = dataclasses.replace(gps_feed(), fields=(live("position", bad),))
        report = validate_feed(desc)
        assert any("aggregation_class location" in v for v in report.violations)

    def test_unknown_class_rejected_until_registered(self):
        energy = SemanticType(id="energy", value_kind="decimal", unit="kwh", aggregation_class="energy")
        desc = dataclasses.replace(temp_feed(), fields=(live("kwh", energy),))
        assert not validate_feed(desc).ok
        registry = TypeRegistry(extra_classes=["energy"])
        assert validate_feed(desc, registry).ok


class TestDescriptorHash:
    def test_deterministic(self):
        assert descriptor_hash(accel_feed()) == descriptor_hash(accel_feed())

    def test_created_at_excluded(self):
        a = accel_feed(created_at=0)
        b = accel_feed(created_at=12345)
        assert descriptor_hash(a) == descriptor_hash(b)

    def test_keyword_change_changes_hash(self):
        a = temp_feed()
        b = dataclasses.replace(a, keywords=frozenset({"temperature", "indoor"}))
        assert descriptor_hash(a) != descriptor_hash(b)

    def test_field_order_is_insignificant(self):
        a = accel_feed()
        b = dataclasses.replace(a, fields=tuple(reversed(a.fields)))
        assert descriptor_hash(a) == descriptor_hash(b)

    def test_single_field_mutations_change_hash(self):
        base = temp_feed()
        mutations = [
            dataclasses.replace(base, id="temp-other"),
            dataclasses.replace(base, scope="global"),
            dataclasses.replace(base, owner="other-hub"),
            dataclasses.replace(base, keywords=base.keywords | {"extra"}),
            dataclasses.replace(base, fields=(live("temperature2", st_temperature(), ["temperature"]),)),
            dataclasses.replace(base, fields=(live("temperature", st_temperature("kelvin"), ["temperature"]),)),
            dataclasses.replace(base, fields=(live("temperature", st_temperature(), ["temperature", "kw"]),)),
        ]
        reference = descriptor_hash(base)
        for mutated in mutations:
            assert descriptor_hash(mutated) != reference

    def test_invalid_descriptor_rejected(self):
        bad = dataclasses.replace(temp_feed(), fields=())
        with pytest.raises(InvalidDescriptor):
            descriptor_hash(bad)

    @given(st.integers(min_value=0, max_value=10**12))
    def test_hash_equality_matches_canonical_equality(self, created_at):
        a = combo_feed()
        b = dataclasses.replace(combo_feed(), created_at=created_at)
        assert descriptor_hash(a) == descriptor_hash(b)


class TestSerialization:
    def test_descriptor_round_trip(self):
        for desc in (accel_feed(), temp_feed(), gps_feed(), switch_feed(), series_feed()):
            again = FeedDescriptor.from_json_dict(desc.to_json_dict())
            assert again == desc

    def test_canonical_json_sorted_and_compact(self):
        data = canonical_json({"b": 1, "a": [2, 3]})
        assert data == b'{"a":[2,3],"b":1}'

    def test_sample_round_trip(self):
        sample = Sample(feed_id="f", seq=3, t_ms=1200, values={"x": 1.5})
        assert Sample.from_json_dict(sample.to_json_dict()) == Sample(
            feed_id="f", seq=3, t_ms=1200, values={"x": 1.5}
        ) or sample.to_json_dict() == Sample.from_json_dict(sample.to_json_dict()).to_json_dict()

    def test_malformed_descriptor_raises(self):
        with pytest.raises(SchemaError):
            FeedDescriptor.from_json_dict({"id": "x"})


class TestValueKinds:
    @pytest.mark.parametrize(
        "value,kind,ok",
        [
            (1.5, "decimal", True),
            (2, "decimal", True),
            (True, "decimal", False),
            (2, "integer", True),
            (True, "integer", False),
            (False, "boolean", True),
            ("hi", "text", True),
            (1200, "timestamp", True),
            ({"lat": 60.0, "lon": 24.0}, "geo_point", True),
            ({"lat": 91.0, "lon": 24.0}, "geo_point", False),
            ({"lat": 60.0}, "geo_point", False),
        ],
    )
    def test_value_matches_kind(self, value, kind, ok):
        assert value_matches_kind(value, kind) is ok

    def test_sample_violations(self):
        desc = temp_feed()
        assert sample_violations(desc, {"temperature": 21.5}) == []
        assert sample_violations(desc, {}) == ["missing field 'temperature'"]
        assert any("unexpected field" in v for v in sample_violations(desc, {"temperature": 1.0, "x": 2.0}))
        assert any("does not match kind" in v for v in sample_violations(desc, {"temperature": "warm"}))
