"""Headless demo scenarios: the staged shake evaluation and the smart-city cascade.

Both scenarios run entirely in-process on a simulated clock and write
plot-ready data files plus a JSON report into the chosen output directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .apps import DEFAULT_SHAKE_COOLDOWN_MS, DEFAULT_SHAKE_THRESHOLD, shake_app_package
from .clock import SimClock, SimScheduler
from .enablers import StageSpec, Trace, generate_trace
from .hub import HubApi, HubConfig, HubCore
from .metahub import MetahubApi, MetahubCore
from .model import TypeRegistry, canonical_json
from .transport import InProcessTransport

SHAKE_STAGES = (
    StageSpec("shake_every", 180, interval_s=30),
    StageSpec("rest", 60),
    StageSpec("shake_fast", 30),
)
REST_ONLY_STAGES = (StageSpec("rest", 270),)

WEEK_MS = 7 * 24 * 3_600_000
HOUR_MS = 3_600_000
METAHUB_URL = "inproc://metahub"


@dataclass
class ShakeReport:
    seed: int
    threshold: float
    cooldown_ms: int
    stages: list[tuple[str, int, int]]
    shake_events_ms: list[int]
    stage_events: list[int]
    forces: list[tuple[int, float]]
    toggles: list[tuple[int, bool]]

    @property
    def toggle_times_ms(self) -> list[int]:
        return [t for t, _ in self.toggles]

    def stage_toggles(self, stage_index: int) -> list[int]:
        _, start, end = self.stages[stage_index]
        return [t for t in self.toggle_times_ms if start <= t < end]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threshold": self.threshold,
            "cooldown_ms": self.cooldown_ms,
            "stages": [list(s) for s in self.stages],
            "shake_events_ms": self.shake_events_ms,
            "stage_events": self.stage_events,
            "toggles": [[t, on] for t, on in self.toggles],
            "toggle_count": len(self.toggles),
        }


def run_shake_eval(
    out_dir: str | Path,
    seed: int,
    stages: tuple[StageSpec, ...] = SHAKE_STAGES,
    threshold: float = DEFAULT_SHAKE_THRESHOLD,
    cooldown_ms: int = DEFAULT_SHAKE_COOLDOWN_MS,
) -> ShakeReport:
    """Drive the full accelerometer -> pipe -> rule -> actuator path over a staged trace."""
    from .apps import AppEngine
    from .dataflow import DataflowEngine
    from .enablers import DeviceManager

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    clock = SimClock()
    scheduler = SimScheduler(clock)
    engine = DataflowEngine(clock=clock)
    devices = DeviceManager(engine, scheduler)
    apps = AppEngine(engine, devices)

    trace = generate_trace(stages, seed)
    trace.write_file(out / "trace.tsv")
    devices.instantiate("accelerometer", {"trace": list(trace.rows), "period_ms": trace.period_ms})
    devices.instantiate("switch", {})

    apps.install(shake_app_package(threshold=threshold, cooldown_ms=cooldown_ms))
    apps.start("shake-to-toggle")
    status = apps.status("shake-to-toggle")

    forces: list[tuple[int, float]] = []
    toggles: list[tuple[int, bool]] = []
    engine.subscribe_callback("shake-to-toggle.p0", lambda s: forces.append((s.t_ms, s.values["force"])))
    engine.subscribe_callback(status.bound_feeds["req:1"], lambda s: toggles.append((s.t_ms, s.values["on"])))

    end_ms = trace.stages[-1][2] if trace.stages else 0
    scheduler.run_until(end_ms + trace.period_ms)

    report = ShakeReport(
        seed=seed,
        threshold=threshold,
        cooldown_ms=cooldown_ms,
        stages=list(trace.stages),
        shake_events_ms=[t for t, _ in trace.events],
        stage_events=[len(trace.event_times_ms(i)) for i in range(len(trace.stages))],
        forces=forces,
        toggles=toggles,
    )
    (out / "force.tsv").write_text(
        "\n".join(f"{t}\t{value!r}" for t, value in forces) + ("\n" if forces else ""), encoding="utf-8"
    )
    (out / "toggles.tsv").write_text(
        "\n".join(f"{t}\t{1 if on else 0}" for t, on in toggles) + ("\n" if toggles else ""), encoding="utf-8"
    )
    (out / "report.json").write_bytes(canonical_json(report.to_json_dict()) + b"\n")
    return report


def shake_oracle(trace: Trace, threshold: float = DEFAULT_SHAKE_THRESHOLD, cooldown_ms: int = DEFAULT_SHAKE_COOLDOWN_MS) -> list[int]:
    """Single-pass reference scan: axis sums, consecutive deltas, threshold with cooldown."""
    sums = [x + y + z for _, x, y, z in trace.rows]
    times = [t for t, _, _, _ in trace.rows]
    fires: list[int] = []
    last: int | None = None
    for i in range(1, len(sums)):
        force = abs(sums[i] - sums[i - 1])
        if force > threshold and (last is None or times[i] - last >= cooldown_ms):
            fires.append(times[i])
            last = times[i]
    return fires


@dataclass
class SmartCityReport:
    seed: int
    homes: list[str]
    week_ends_ms: list[int]
    per_home_weekly: dict[str, list[float]]
    city_values: list[float]
    catalog_size: int
    city_feed_ids: list[str]

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "homes": self.homes,
            "week_ends_ms": self.week_ends_ms,
            "per_home_weekly": {k: list(v) for k, v in self.per_home_weekly.items()},
            "city_values": self.city_values,
            "catalog_size": self.catalog_size,
            "city_feed_ids": self.city_feed_ids,
        }


def _energy_series_descriptor(feed_id: str, scope: str, keywords: tuple[str, ...], value_field: str = "energy_kwh") -> dict:
    return {
        "id": feed_id,
        "kind": "time_series",
        "fields": [
            {
                "name": "at",
                "semantic_type": {"id": "time", "value_kind": "timestamp", "unit": "ms", "aggregation_class": "time"},
                "access_mode": "stored",
                "keywords": [],
            },
            {
                "name": value_field,
                "semantic_type": {"id": "energy", "value_kind": "decimal", "unit": "kwh", "aggregation_class": "energy"},
                "access_mode": "stored",
                "keywords": ["energy"],
            },
        ],
        "scope": scope,
        "keywords": list(keywords),
        "dependencies": [],
        "pipe": None,
        "created_at": 0,
        "owner": "",
    }


class _Client:
    """Tiny JSON client over a transport, one per hub in the cascade."""

    def __init__(self, transport, base_uri: str, token: str):
        self.transport = transport
        self.base_uri = base_uri.rstrip("/")
        self.token = token

    def call(self, method: str, path: str, payload=None, token: str | None = None):
        body = json.dumps(payload).encode() if payload is not None else None
        status, data = self.transport.request(
            method,
            self.base_uri + path,
            body=body,
            headers={"Authorization": f"Bearer {token or self.token}"},
        )
        parsed = json.loads(data) if data else None
        if status >= 400:
            raise RuntimeError(f"{method} {path} failed ({status}): {parsed}")
        return parsed


def _home_profile(rng, hour_of_day: int) -> float:
    if 18 <= hour_of_day < 22:
        base = 1.2
    elif 7 <= hour_of_day < 18:
        base = 0.4
    else:
        base = 0.1
    return base + rng.uniform(0.0, 0.3)


def run_smart_city(out_dir: str | Path, seed: int, homes: int = 3, days: int = 15) -> SmartCityReport:
    """Home hubs publish privatized weekly energy aggregates; a building hub fuses
    them; the city hub ends up holding only the fused aggregates."""
    import random

    out = Path(out_dir)
    (out / "homes").mkdir(parents=True, exist_ok=True)

    clock = SimClock()
    transport = InProcessTransport()
    metahub = MetahubCore(clock=clock, registry=TypeRegistry(extra_classes=["energy"]))
    transport.register(METAHUB_URL, MetahubApi(metahub))

    def make_hub(hub_id: str) -> tuple[HubCore, _Client]:
        config = HubConfig(
            hub_id=hub_id,
            clock_mode="simulated",
            owner_token=f"owner-{hub_id}",
            base_uri=f"inproc://{hub_id}",
            metahub_urls=(METAHUB_URL,),
            extra_classes=("energy",),
        )
        core = HubCore(config, transport=transport, clock=clock)
        transport.register(config.base_uri, HubApi(core))
        return core, _Client(transport, config.base_uri, config.owner_token)

    home_ids = [f"home-{i + 1}" for i in range(homes)]
    home_clients: dict[str, _Client] = {}
    reader_tokens: dict[str, str] = {}

    hours = days * 24
    raw: dict[str, list[float]] = {}
    for index, hub_id in enumerate(home_ids):
        _, client = make_hub(hub_id)
        home_clients[hub_id] = client
        client.call("POST", "/feeds", _energy_series_descriptor("energy-raw", "private", ("energy", "raw")))
        weekly = {
            "id": "energy-weekly",
            "kind": "derived",
            "fields": _energy_series_descriptor("x", "global", ())["fields"][1:],
            "scope": "global",
            "keywords": ["energy", "weekly"],
            "dependencies": ["energy-raw"],
            "pipe": {
                "sources": ["energy-raw"],
                "operators": [
                    {
                        "id": "week_sum",
                        "kind": "aggregate_window",
                        "params": {"fn": "sum", "fields": ["energy_kwh"], "window_ms": WEEK_MS},
                        "inputs": ["source:0"],
                    }
                ],
                "sink": "week_sum",
            },
            "created_at": 0,
            "owner": hub_id,
        }
        client.call("POST", "/feeds", weekly)

        rng = random.Random(seed * 1000 + index)
        values = [_home_profile(rng, h % 24) for h in range(hours)]
        raw[hub_id] = values
        for h, kwh in enumerate(values):
            client.call(
                "POST", "/feeds/energy-raw/data",
                {"values": {"at": h * HOUR_MS, "energy_kwh": kwh}, "t_ms": h * HOUR_MS},
            )
        client.call("POST", "/publications", {"feed_id": "energy-weekly", "metahub_url": METAHUB_URL})
        reader_tokens[hub_id] = client.call("POST", "/tokens", {"grants": ["global"], "label": "building"})["token"]
        (out / "homes" / f"{hub_id}.tsv").write_text(
            "\n".join(f"{h * HOUR_MS}\t{kwh!r}" for h, kwh in enumerate(values)) + "\n", encoding="utf-8"
        )

    # Building hub: discover home weekly feeds through the meta-hub, fuse them.
    building_core, building = make_hub("building-1")
    status, body = transport.request("GET", METAHUB_URL + "/catalog/feeds?q=energy weekly&class=energy", headers={"X-Hub-Id": "building-1"})
    entries = json.loads(body)
    if len(entries) != homes:
        raise RuntimeError(f"expected {homes} catalog entries, found {len(entries)}")
    entries.sort(key=lambda e: e["hub_id"])

    per_home_weekly: dict[str, list[float]] = {}
    week_ends: list[int] = []
    for entry in entries:
        token = reader_tokens[entry["hub_id"]]
        samples = _Client(transport, entry["base_uri"], token).call(
            "GET", f"/feeds/{entry['descriptor']['id']}/data?from=0&to=4611686018427387904"
        )
        per_home_weekly[entry["hub_id"]] = [s["values"]["sum_energy"] for s in samples]
        week_ends = [s["t_ms"] for s in samples]

    building.call("POST", "/feeds", _energy_series_descriptor("building-weekly", "global", ("energy", "weekly", "building"), value_field="sum_energy"))
    for w, end in enumerate(week_ends):
        total = sum(per_home_weekly[hub_id][w] for hub_id in home_ids)
        building.call("POST", "/feeds/building-weekly/data", {"values": {"at": end, "sum_energy": total}, "t_ms": end})
    building.call("POST", "/publications", {"feed_id": "building-weekly", "metahub_url": METAHUB_URL})
    city_reader = building.call("POST", "/tokens", {"grants": ["global"], "label": "city"})["token"]

    # City hub: read the building aggregate only; never any per-home series.
    city_core, city = make_hub("city-1")
    status, body = transport.request("GET", METAHUB_URL + "/catalog/feeds?q=building weekly&class=energy", headers={"X-Hub-Id": "city-1"})
    building_entries = json.loads(body)
    if len(building_entries) != 1:
        raise RuntimeError(f"expected one building entry, found {len(building_entries)}")
    entry = building_entries[0]
    samples = _Client(transport, entry["base_uri"], city_reader).call(
        "GET", f"/feeds/{entry['descriptor']['id']}/data?from=0&to=4611686018427387904"
    )
    city.call("POST", "/feeds", _energy_series_descriptor("city-weekly", "hub", ("energy", "weekly", "city"), value_field="sum_energy"))
    for sample in samples:
        city.call("POST", "/feeds/city-weekly/data", {"values": sample["values"], "t_ms": sample["t_ms"]})

    city_samples = city.call("GET", "/feeds/city-weekly/data?from=0&to=4611686018427387904")
    city_values = [s["values"]["sum_energy"] for s in city_samples]

    # Sanity: the cascade must reproduce the direct weekly sums over raw data.
    for w, end in enumerate(week_ends):
        expected = sum(sum(raw[h][w * 168:(w + 1) * 168]) for h in home_ids)
        if city_values[w] != expected:
            raise RuntimeError(f"city aggregate for week {w} diverged: {city_values[w]} != {expected}")

    report = SmartCityReport(
        seed=seed,
        homes=home_ids,
        week_ends_ms=week_ends,
        per_home_weekly=per_home_weekly,
        city_values=city_values,
        catalog_size=metahub.catalog_size(),
        city_feed_ids=[d.id for d in city_core.engine.descriptors()],
    )
    (out / "city_weekly.tsv").write_text(
        "\n".join(f"{t}\t{v!r}" for t, v in zip(week_ends, city_values)) + "\n", encoding="utf-8"
    )
    (out / "report.json").write_bytes(canonical_json(report.to_json_dict()) + b"\n")
    return report
