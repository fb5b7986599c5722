from __future__ import annotations

import pytest

from iothub.model import FeedDescriptor, FieldDescriptor, SemanticType


def st_temperature(unit: str = "celsius") -> SemanticType:
    return SemanticType(id="temperature", value_kind="decimal", unit=unit, aggregation_class="temperature")


def st_humidity() -> SemanticType:
    return SemanticType(id="relative_humidity", value_kind="decimal", unit="percent", aggregation_class="relative_humidity")


def st_acceleration() -> SemanticType:
    return SemanticType(id="acceleration", value_kind="decimal", unit="m_per_s2", aggregation_class="acceleration")


def st_location() -> SemanticType:
    return SemanticType(id="location", value_kind="geo_point", unit=None, aggregation_class="location")


def st_switch() -> SemanticType:
    return SemanticType(id="switch_state", value_kind="boolean", unit=None, aggregation_class="switch_state")


def st_timestamp() -> SemanticType:
    return SemanticType(id="time", value_kind="timestamp", unit="ms", aggregation_class="time")


def live(name: str, st: SemanticType, keywords=()) -> FieldDescriptor:
    return FieldDescriptor(name=name, semantic_type=st, access_mode="live", keywords=frozenset(keywords))


def stored(name: str, st: SemanticType, keywords=()) -> FieldDescriptor:
    return FieldDescriptor(name=name, semantic_type=st, access_mode="stored", keywords=frozenset(keywords))


def accel_feed(feed_id: str = "accel-0", created_at: int = 0) -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(
            live("x", st_acceleration(), ["acceleration"]),
            live("y", st_acceleration(), ["acceleration"]),
            live("z", st_acceleration(), ["acceleration"]),
        ),
        keywords=frozenset({"accelerometer", "motion"}),
        created_at=created_at,
        owner="hub",
    )


def temp_feed(feed_id: str = "temp-0", unit: str = "celsius", created_at: int = 0) -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(live("temperature", st_temperature(unit), ["temperature"]),),
        keywords=frozenset({"temperature"}),
        created_at=created_at,
        owner="hub",
    )


def humidity_feed(feed_id: str = "hum-0") -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(live("humidity", st_humidity(), ["humidity"]),),
        keywords=frozenset({"humidity"}),
        owner="hub",
    )


def combo_feed(feed_id: str = "combo-0") -> FeedDescriptor:
    """One feed carrying both a temperature and a humidity field."""
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(
            live("temperature", st_temperature(), ["temperature"]),
            live("humidity", st_humidity(), ["humidity"]),
        ),
        owner="hub",
    )


def gps_feed(feed_id: str = "gps-0", created_at: int = 0) -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_sensor",
        fields=(live("position", st_location(), ["gps"]),),
        keywords=frozenset({"gps", "location"}),
        created_at=created_at,
        owner="hub",
    )


def switch_feed(feed_id: str = "switch-0", created_at: int = 0) -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="atomic_actuator",
        fields=(live("on", st_switch(), ["switch"]),),
        keywords=frozenset({"switch"}),
        created_at=created_at,
        owner="hub",
    )


def series_feed(feed_id: str = "series-0") -> FeedDescriptor:
    return FeedDescriptor(
        id=feed_id,
        kind="time_series",
        fields=(
            stored("at", st_timestamp()),
            stored("temperature", st_temperature(), ["temperature"]),
        ),
        keywords=frozenset({"weather"}),
        owner="hub",
    )


@pytest.fixture
def fresh_engine():
    from iothub.clock import SimClock
    from iothub.dataflow import DataflowEngine
    from iothub.geo import default_city_table

    return DataflowEngine(clock=SimClock(), city_table=default_city_table())


def _acceptance_lines(terminalreporter) -> list[str]:
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if "acceptance" in report.keywords:
                label = report.nodeid.split("::", 1)[1]
                lines.append(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {label}")
    return sorted(lines, key=lambda line: line[6:])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = _acceptance_lines(terminalreporter)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
