from __future__ import annotations

import dataclasses

import pytest

from iothub.apps import (
    AppEngine,
    AppPackage,
    Requirement,
    TriggerRule,
    evaluate_rule,
    shake_app_package,
    validate_app_static,
)
from iothub.clock import SimClock, SimScheduler
from iothub.dataflow import DataflowEngine
from iothub.enablers import DeviceManager, StageSpec, generate_trace
from iothub.errors import AlreadyRunning, InvalidPackage, NotBound, NotRunning


@pytest.fixture
def rig():
    clock = SimClock()
    scheduler = SimScheduler(clock)
    engine = DataflowEngine(clock=clock)
    devices = DeviceManager(engine, scheduler)
    apps = AppEngine(engine, devices)
    return clock, scheduler, engine, devices, apps


def install_shake(rig, trace=None, threshold=5.0):
    _, _, engine, devices, apps = rig
    trace = trace or generate_trace([StageSpec("shake_every", 90, interval_s=30)], seed=5)
    devices.instantiate("accelerometer", {"trace": list(trace.rows), "period_ms": trace.period_ms})
    devices.instantiate("switch", {})
    apps.install(shake_app_package(threshold=threshold))
    return trace


class TestStaticValidation:
    def test_shipped_fixture_passes(self):
        report = validate_app_static(shake_app_package())
        assert report.ok, report.violations

    def test_round_trip_serialization(self):
        pkg = shake_app_package()
        again = AppPackage.from_json_dict(pkg.to_json_dict())
        assert again == pkg

    def test_rule_referencing_unknown_pipe_output(self):
        pkg = shake_app_package()
        bad_rule = dataclasses.replace(pkg.rules[0], watch_target="pipe:7")
        report = validate_app_static(dataclasses.replace(pkg, rules=(bad_rule,)))
        assert any("watch target" in v for v in report.violations)

    def test_pipe_aggregating_incompatible_classes(self):
        from iothub.model import Operator, PipeSpec

        pkg = AppPackage(
            app_id="bad-agg",
            name="bad",
            version="1",
            requires=(
                Requirement("temperature", "atomic_sensor"),
                Requirement("relative_humidity", "atomic_sensor"),
            ),
            pipes=(
                PipeSpec(
                    sources=("req:0", "req:1"),
                    operators=(
                        Operator(
                            id="agg",
                            kind="aggregate_window",
                            params={"fn": "mean", "fields": ["temperature"], "window_ms": 1000},
                            inputs=("source:0", "source:1"),
                        ),
                    ),
                    sink="agg",
                ),
            ),
        )
        report = validate_app_static(pkg)
        assert any("pipe 0" in v for v in report.violations)

    def test_watched_field_must_exist(self):
        pkg = shake_app_package()
        bad_rule = dataclasses.replace(pkg.rules[0], watch_field="missing")
        report = validate_app_static(dataclasses.replace(pkg, rules=(bad_rule,)))
        assert any("watched field" in v for v in report.violations)

    def test_action_must_target_actuator(self):
        pkg = shake_app_package()
        bad_rule = dataclasses.replace(pkg.rules[0], action_target="req:0")
        report = validate_app_static(dataclasses.replace(pkg, rules=(bad_rule,)))
        assert any("atomic_actuator" in v for v in report.violations)

    def test_unknown_param_reference(self):
        pkg = shake_app_package()
        bad_rule = dataclasses.replace(pkg.rules[0], condition_param="nope")
        report = validate_app_static(dataclasses.replace(pkg, rules=(bad_rule,)))
        assert any("unknown param" in v for v in report.violations)


class TestBinding:
    def test_binds_when_feeds_available(self, rig):
        install_shake(rig)
        _, _, _, _, apps = rig
        status = apps.status("shake-to-toggle")
        assert status.state == "installed"
        assert set(status.bound_feeds) == {"req:0", "req:1"}

    def test_missing_switch_reports_unsatisfied(self, rig):
        _, _, engine, devices, apps = rig
        trace = generate_trace([StageSpec("rest", 2)], seed=1)
        devices.instantiate("accelerometer", {"trace": list(trace.rows)})
        status = apps.install(shake_app_package())
        assert status.state == "unsatisfied"
        assert status.missing == ("req:1",)

    def test_earliest_created_feed_wins(self, rig):
        clock, _, engine, devices, apps = rig
        trace = generate_trace([StageSpec("rest", 1)], seed=1)
        devices.instantiate("accelerometer", {"trace": list(trace.rows), "feed_id": "first"})
        clock._advance_to(10_000)
        devices.instantiate("accelerometer", {"trace": list(trace.rows), "feed_id": "second"})
        devices.instantiate("switch", {})
        status = apps.install(shake_app_package())
        assert status.bound_feeds["req:0"] == "first"

    def test_invalid_package_rejected(self, rig):
        _, _, _, _, apps = rig
        pkg = dataclasses.replace(shake_app_package(), version="")
        with pytest.raises(InvalidPackage):
            apps.install(pkg)


class TestLifecycle:
    def test_start_creates_force_feed_and_arms_rule(self, rig):
        install_shake(rig)
        _, scheduler, engine, _, apps = rig
        status = apps.start("shake-to-toggle")
        assert status.state == "running"
        assert engine.has_feed("shake-to-toggle.p0")
        assert [f.name for f in engine.descriptor("shake-to-toggle.p0").fields] == ["force"]

    def test_start_twice_raises(self, rig):
        install_shake(rig)
        _, _, _, _, apps = rig
        apps.start("shake-to-toggle")
        with pytest.raises(AlreadyRunning):
            apps.start("shake-to-toggle")

    def test_start_unsatisfied_raises_not_bound(self, rig):
        _, _, _, _, apps = rig
        apps.install(shake_app_package())
        with pytest.raises(NotBound):
            apps.start("shake-to-toggle")

    def test_stop_removes_derived_feeds_and_disarms(self, rig):
        trace = install_shake(rig)
        _, scheduler, engine, _, apps = rig
        apps.start("shake-to-toggle")
        apps.stop("shake-to-toggle")
        assert not engine.has_feed("shake-to-toggle.p0")
        switch_id = apps.status("shake-to-toggle").bound_feeds["req:1"]
        toggles = []
        engine.subscribe_callback(switch_id, toggles.append)
        scheduler.run_until(100_000)
        assert toggles == []

    def test_stop_twice_raises(self, rig):
        install_shake(rig)
        _, _, _, _, apps = rig
        apps.start("shake-to-toggle")
        apps.stop("shake-to-toggle")
        with pytest.raises(NotRunning):
            apps.stop("shake-to-toggle")

    def test_stop_then_start_clears_cooldown_state(self, rig):
        install_shake(rig)
        _, scheduler, _, _, apps = rig
        apps.start("shake-to-toggle")
        scheduler.run_until(100_000)
        fired = apps.status("shake-to-toggle").fire_count
        assert fired > 0
        apps.stop("shake-to-toggle")
        status = apps.start("shake-to-toggle")
        assert status.state == "running"
        assert apps.status("shake-to-toggle").fire_count == 0
        assert apps.status("shake-to-toggle").last_fired_ms is None

    def test_action_failure_marks_failed(self, rig):
        install_shake(rig)
        _, scheduler, engine, devices, apps = rig
        apps.start("shake-to-toggle")
        switch_id = apps.status("shake-to-toggle").bound_feeds["req:1"]

        original = devices.apply_command

        def broken(feed_id, command, on=None, t_ms=None):
            raise RuntimeError("camera busy")

        devices.apply_command = broken
        try:
            scheduler.run_until(100_000)
        finally:
            devices.apply_command = original
        status = apps.status("shake-to-toggle")
        assert status.state == "failed"
        assert "camera busy" in status.diagnostic


class TestRuleSemantics:
    def rule(self, cooldown=2000):
        return TriggerRule(
            watch_target="pipe:0",
            watch_field="force",
            condition_op=">",
            condition_value=5.0,
            cooldown_ms=cooldown,
            action_target="req:1",
            command="toggle",
        )

    def test_zero_force_never_fires(self):
        rule = self.rule()
        last = None
        for t in range(0, 10_000, 200):
            assert evaluate_rule(rule, {}, {"force": 0.0}, t, last) == "no_match"

    def test_one_spike_fires_once(self, rig):
        trace = generate_trace([StageSpec("shake_every", 20, interval_s=60)], seed=7)
        install_shake(rig, trace=trace)
        _, scheduler, engine, _, apps = rig
        apps.start("shake-to-toggle")
        switch_id = apps.status("shake-to-toggle").bound_feeds["req:1"]
        toggles = []
        engine.subscribe_callback(switch_id, toggles.append)
        scheduler.run_until(60_000)
        assert len(toggles) == 1

    def test_continuous_force_fires_on_cooldown_grid(self):
        # Oracle from the staged scan: forces at 200 ms spacing for 5 s, all
        # above threshold, cooldown 2000 ms -> fires at t0, t0+2000, t0+4000.
        rule = self.rule(cooldown=2000)
        fires = []
        last = None
        for t in range(1000, 6001, 200):
            outcome = evaluate_rule(rule, {}, {"force": 9.0}, t, last)
            if outcome == "fire":
                fires.append(t)
                last = t
        assert fires == [1000, 3000, 5000]

    def test_suppress_outcome_during_cooldown(self):
        rule = self.rule()
        assert evaluate_rule(rule, {}, {"force": 9.0}, 1000, None) == "fire"
        assert evaluate_rule(rule, {}, {"force": 9.0}, 1200, 1000) == "suppress"
        assert evaluate_rule(rule, {}, {"force": 9.0}, 3000, 1000) == "fire"

    def test_param_resolution(self):
        rule = TriggerRule(
            watch_target="pipe:0",
            watch_field="force",
            condition_op=">",
            condition_param="threshold",
            cooldown_ms=0,
            action_target="req:1",
            command="toggle",
        )
        assert evaluate_rule(rule, {"threshold": 5.0}, {"force": 6.0}, 0, None) == "fire"
        assert evaluate_rule(rule, {"threshold": 7.0}, {"force": 6.0}, 0, None) == "no_match"


class TestEngineOracleEquivalence:
    def test_fire_times_match_brute_force_scan(self, rig):
        trace = generate_trace(
            [StageSpec("shake_every", 60, interval_s=15), StageSpec("rest", 10), StageSpec("shake_fast", 10)],
            seed=21,
        )
        install_shake(rig, trace=trace)
        clock, scheduler, engine, _, apps = rig
        apps.start("shake-to-toggle")
        switch_id = apps.status("shake-to-toggle").bound_feeds["req:1"]
        toggles = []
        engine.subscribe_callback(switch_id, toggles.append)
        scheduler.run_until(120_000)

        # Independent single-pass oracle over the raw trace.
        sums = [x + y + z for _, x, y, z in trace.rows]
        times = [t for t, *_ in trace.rows]
        fires = []
        last = None
        for i in range(1, len(sums)):
            force = abs(sums[i] - sums[i - 1])
            if force > 5.0 and (last is None or times[i] - last >= 2000):
                fires.append(times[i])
                last = times[i]
        assert [s.t_ms for s in toggles] == fires
        assert apps.status("shake-to-toggle").fire_count == len(fires)

    def test_twenty_repetitions_identical_actuator_log(self):
        from iothub.model import canonical_json

        def run_once() -> bytes:
            clock = SimClock()
            scheduler = SimScheduler(clock)
            engine = DataflowEngine(clock=clock)
            devices = DeviceManager(engine, scheduler)
            apps = AppEngine(engine, devices)
            trace = generate_trace([StageSpec("shake_every", 30, interval_s=10), StageSpec("shake_fast", 10)], seed=12)
            devices.instantiate("accelerometer", {"trace": list(trace.rows)})
            devices.instantiate("switch", {})
            apps.install(shake_app_package())
            apps.start("shake-to-toggle")
            switch_id = apps.status("shake-to-toggle").bound_feeds["req:1"]
            log = []
            engine.subscribe_callback(switch_id, lambda s: log.append(s.to_json_dict()))
            scheduler.run_until(60_000)
            return canonical_json(log)

        runs = {run_once() for _ in range(20)}
        assert len(runs) == 1

    def test_toggle_spacing_at_least_cooldown(self, rig):
        trace = generate_trace([StageSpec("shake_fast", 30)], seed=3)
        install_shake(rig, trace=trace)
        _, scheduler, engine, _, apps = rig
        apps.start("shake-to-toggle")
        switch_id = apps.status("shake-to-toggle").bound_feeds["req:1"]
        toggles = []
        engine.subscribe_callback(switch_id, toggles.append)
        scheduler.run_until(60_000)
        assert len(toggles) > 5
        gaps = [b.t_ms - a.t_ms for a, b in zip(toggles, toggles[1:])]
        assert all(gap >= 2000 for gap in gaps)
