"""The meta-hub: hub registry, deduplicated feed catalog, app catalog, search, metering.

Routes:
    POST /hubs
    POST /catalog/feeds · GET /catalog/feeds?q&class&lat&lon&k&max · GET /catalog/feeds/{hash}
    POST /catalog/apps · GET /catalog/apps · GET /catalog/apps/{id}/{version}
    GET /catalog/enablers · POST /catalog/enablers
    GET /accounting/{hub_id}

Catalog writes require a registered hub_id; reads are open. Callers may
identify themselves with an ``X-Hub-Id`` header so usage lands on their
account, otherwise it is metered anonymously.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping
from urllib.parse import parse_qs, urlsplit

from .apps import AppPackage, validate_app_static
from .clock import WallClock
from .enablers import EnablerDescriptor
from .errors import (
    ConfigError,
    DuplicateVersion,
    InvalidDescriptor,
    InvalidPackage,
    InvalidUri,
    IoTHubError,
    SchemaError,
    ScopeViolation,
    UnknownResource,
    UnregisteredHub,
)
from .geo import haversine_km
from .model import (
    FeedDescriptor,
    TypeRegistry,
    default_registry,
    descriptor_hash,
    validate_feed,
    value_matches_kind,
)
from .webapi import HttpResponse, header, parse_json_body

ANONYMOUS_HUB = "_anonymous"
USAGE_KINDS = ("catalog_query", "descriptor_fetch", "app_fetch")
BILLING_SCHEMES = ("free", "quantity_based", "time_based")


@dataclass
class MetahubConfig:
    metahub_id: str = "metahub"
    listen_port: int = 8900
    extra_classes: tuple[str, ...] = ()

    def __post_init__(self):
        if not 1 <= self.listen_port <= 65535:
            raise ConfigError(f"listen_port {self.listen_port} out of range")

    @classmethod
    def from_file(cls, path: str | Path) -> "MetahubConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from err
        known = {"metahub_id", "listen_port", "extra_classes"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "extra_classes" in raw:
            raw["extra_classes"] = tuple(raw["extra_classes"])
        try:
            return cls(**raw)
        except TypeError as err:
            raise ConfigError(f"invalid config: {err}") from err


@dataclass(frozen=True)
class HubRegistration:
    hub_id: str
    base_uri: str
    registered_at: int
    last_seen: int
    scheme: str = "free"

    def to_json_dict(self) -> dict:
        return {
            "hub_id": self.hub_id,
            "base_uri": self.base_uri,
            "registered_at": self.registered_at,
            "last_seen": self.last_seen,
            "scheme": self.scheme,
        }


@dataclass(frozen=True)
class CatalogEntry:
    hub_id: str
    descriptor: FeedDescriptor
    descriptor_hash: str
    position: Mapping[str, float] | None
    accuracy: float | None
    latency_ms: float | None
    published_at: int
    base_uri: str = ""  # the publishing hub's URI, so entries are dereferenceable

    def to_json_dict(self) -> dict:
        return {
            "hub_id": self.hub_id,
            "base_uri": self.base_uri,
            "descriptor": self.descriptor.to_json_dict(),
            "descriptor_hash": self.descriptor_hash,
            "position": dict(self.position) if self.position else None,
            "accuracy": self.accuracy,
            "latency_ms": self.latency_ms,
            "published_at": self.published_at,
        }


@dataclass(frozen=True)
class SearchQuery:
    keywords: frozenset[str] = frozenset()
    aggregation_class: str | None = None
    center: tuple[float, float] | None = None
    k: int | None = None
    max_results: int = 50

    def __post_init__(self):
        if self.k is not None and self.center is None:
            raise SchemaError("geo k requires a center")
        if self.k is not None and self.k < 0:
            raise SchemaError("k must be >= 0")
        if self.max_results < 0:
            raise SchemaError("max_results must be >= 0")


@dataclass(frozen=True)
class AppCatalogEntry:
    app_id: str
    name: str
    version: str
    package: AppPackage
    keywords: frozenset[str]
    published_at: int

    def to_json_dict(self) -> dict:
        return {
            "app_id": self.app_id,
            "name": self.name,
            "version": self.version,
            "package": self.package.to_json_dict(),
            "keywords": sorted(self.keywords),
            "published_at": self.published_at,
        }


@dataclass
class UsageRecord:
    hub_id: str
    counters: dict[str, int] = field(default_factory=lambda: {k: 0 for k in USAGE_KINDS})
    scheme: str = "free"

    def to_json_dict(self) -> dict:
        return {"hub_id": self.hub_id, "counters": dict(self.counters), "scheme": self.scheme}


def _entry_tokens(entry: CatalogEntry) -> set[str]:
    tokens = {k.lower() for k in entry.descriptor.keywords}
    for f in entry.descriptor.fields:
        tokens.update(k.lower() for k in f.keywords)
    return tokens


def _match_count(entry: CatalogEntry, keywords: frozenset[str]) -> int:
    """Total keyword hits across descriptor and field keyword sets."""
    count = 0
    desc_tokens = {k.lower() for k in entry.descriptor.keywords}
    for kw in keywords:
        if kw in desc_tokens:
            count += 1
        count += sum(1 for f in entry.descriptor.fields if kw in {k.lower() for k in f.keywords})
    return count


class MetahubCore:
    def __init__(self, *, clock=None, registry: TypeRegistry | None = None):
        self.clock = clock or WallClock()
        self.registry = registry or default_registry()
        self.hubs: dict[str, HubRegistration] = {}
        self.catalog: dict[tuple[str, str], CatalogEntry] = {}
        self.apps: dict[tuple[str, str], AppCatalogEntry] = {}
        self.enablers: dict[str, EnablerDescriptor] = {}
        self._usage: dict[str, UsageRecord] = {}
        self._usage_lock = threading.Lock()
        self._catalog_lock = threading.Lock()

    # -- hub registry --------------------------------------------------------

    def register_hub(self, hub_id: str, base_uri: str, scheme: str = "free") -> tuple[HubRegistration, bool]:
        if not hub_id or not isinstance(hub_id, str):
            raise SchemaError("hub_id must be a nonempty string")
        split = urlsplit(base_uri if isinstance(base_uri, str) else "")
        if not split.scheme or not split.netloc:
            raise InvalidUri(f"base_uri {base_uri!r} is not an absolute URI")
        if scheme not in BILLING_SCHEMES:
            raise SchemaError(f"unknown billing scheme {scheme!r}")
        now = self.clock.now_ms()
        existing = self.hubs.get(hub_id)
        registration = HubRegistration(
            hub_id=hub_id,
            base_uri=base_uri,
            registered_at=existing.registered_at if existing else now,
            last_seen=now,
            scheme=scheme,
        )
        self.hubs[hub_id] = registration
        return registration, existing is None

    # -- feed catalog ----------------------------------------------------------

    def publish_descriptor(
        self,
        hub_id: str,
        descriptor: FeedDescriptor,
        position: Mapping[str, float] | None = None,
        accuracy: float | None = None,
        latency_ms: float | None = None,
    ) -> tuple[CatalogEntry, bool]:
        if hub_id not in self.hubs:
            raise UnregisteredHub(f"hub {hub_id!r} is not registered")
        report = validate_feed(descriptor, self.registry)
        if not report.ok:
            raise InvalidDescriptor("descriptor fails validation", violations=list(report.violations))
        if descriptor.scope != "global":
            raise ScopeViolation("only global-scoped descriptors may be published")
        if position is not None and not value_matches_kind(position, "geo_point"):
            raise SchemaError("position must be a geo_point object")
        if accuracy is not None and not (isinstance(accuracy, (int, float)) and 0.0 <= accuracy <= 1.0):
            raise SchemaError("accuracy must be within [0, 1]")
        if latency_ms is not None and not (isinstance(latency_ms, (int, float)) and latency_ms >= 0):
            raise SchemaError("latency_ms must be >= 0")

        digest = descriptor_hash(descriptor, self.registry)
        key = (hub_id, digest)
        with self._catalog_lock:
            existing = self.catalog.get(key)
            entry = CatalogEntry(
                hub_id=hub_id,
                descriptor=descriptor,
                descriptor_hash=digest,
                position=dict(position) if position else None,
                accuracy=accuracy,
                latency_ms=latency_ms,
                published_at=self.clock.now_ms(),
                base_uri=self.hubs[hub_id].base_uri,
            )
            self.catalog[key] = entry
            return entry, existing is None

    def entry_by_hash(self, digest: str) -> CatalogEntry:
        matches = sorted(
            (entry for (hub, h), entry in self.catalog.items() if h == digest),
            key=lambda e: e.hub_id,
        )
        if not matches:
            raise UnknownResource(f"no catalog entry with hash {digest!r}")
        return matches[0]

    def catalog_size(self) -> int:
        return len(self.catalog)

    def search(self, query: SearchQuery) -> list[CatalogEntry]:
        keywords = frozenset(k.lower() for k in query.keywords)
        candidates = []
        with self._catalog_lock:
            entries = list(self.catalog.values())
        for entry in entries:
            tokens = _entry_tokens(entry)
            if any(kw not in tokens for kw in keywords):
                continue
            if query.aggregation_class is not None and not any(
                f.semantic_type.aggregation_class == query.aggregation_class for f in entry.descriptor.fields
            ):
                continue
            candidates.append(entry)

        if query.k is not None:
            center = query.center
            located = [e for e in candidates if e.position is not None]
            located.sort(
                key=lambda e: (haversine_km(center, e.position), e.hub_id, e.descriptor_hash)
            )
            candidates = located[: query.k]

        candidates.sort(
            key=lambda e: (
                -_match_count(e, keywords),
                -(e.accuracy if e.accuracy is not None else 0.0),
                e.latency_ms if e.latency_ms is not None else math.inf,
                e.hub_id,
                e.descriptor_hash,
            )
        )
        return candidates[: query.max_results]

    # -- app catalog ----------------------------------------------------------

    def publish_app(self, entry: AppCatalogEntry) -> AppCatalogEntry:
        report = validate_app_static(entry.package, self.registry)
        if not report.ok:
            raise InvalidPackage("app package fails validation", violations=list(report.violations))
        key = (entry.app_id, entry.version)
        if key in self.apps:
            raise DuplicateVersion(f"app {entry.app_id!r} version {entry.version!r} already published")
        self.apps[key] = entry
        return entry

    def get_app(self, app_id: str, version: str) -> AppCatalogEntry:
        entry = self.apps.get((app_id, version))
        if entry is None:
            raise UnknownResource(f"no app {app_id!r} version {version!r}")
        return entry

    def list_apps(self) -> list[AppCatalogEntry]:
        return [self.apps[k] for k in sorted(self.apps)]

    # -- enabler catalog ---------------------------------------------------------

    def publish_enabler(self, descriptor: EnablerDescriptor) -> bool:
        created = descriptor.id not in self.enablers
        self.enablers[descriptor.id] = descriptor
        return created

    def list_enablers(self) -> list[EnablerDescriptor]:
        return [self.enablers[k] for k in sorted(self.enablers)]

    # -- accounting ----------------------------------------------------------------

    def record_usage(self, hub_id: str | None, kind: str) -> UsageRecord:
        if kind not in USAGE_KINDS:
            raise SchemaError(f"unknown usage kind {kind!r}")
        account = hub_id if hub_id and hub_id in self.hubs else ANONYMOUS_HUB
        scheme = self.hubs[account].scheme if account in self.hubs else "free"
        with self._usage_lock:
            record = self._usage.setdefault(account, UsageRecord(hub_id=account, scheme=scheme))
            record.scheme = scheme
            record.counters[kind] += 1
            return UsageRecord(hub_id=account, counters=dict(record.counters), scheme=record.scheme)

    def usage(self, hub_id: str) -> UsageRecord:
        with self._usage_lock:
            record = self._usage.get(hub_id)
            if record is None:
                scheme = self.hubs[hub_id].scheme if hub_id in self.hubs else "free"
                return UsageRecord(hub_id=hub_id, scheme=scheme)
            return UsageRecord(hub_id=hub_id, counters=dict(record.counters), scheme=record.scheme)


class MetahubApi:
    def __init__(self, core: MetahubCore):
        self.core = core

    def handle_request(self, method: str, path: str, headers: Mapping[str, str], body: bytes | None) -> HttpResponse:
        split = urlsplit(path)
        segments = [s for s in split.path.split("/") if s]
        query = {k: v[-1] for k, v in parse_qs(split.query).items()}
        caller = header(headers, "X-Hub-Id")
        try:
            return self._route(method, segments, query, caller, body)
        except IoTHubError as err:
            return HttpResponse.from_error(err)

    def _route(self, method: str, segments: list[str], query: dict, caller: str | None, body: bytes | None) -> HttpResponse:
        if segments == ["hubs"] and method == "POST":
            payload = parse_json_body(body)
            registration, created = self.core.register_hub(
                payload.get("hub_id"), payload.get("base_uri"), payload.get("scheme", "free")
            )
            return HttpResponse.json(201 if created else 200, registration.to_json_dict())

        if segments[:2] == ["catalog", "feeds"]:
            rest = segments[2:]
            if not rest and method == "POST":
                payload = parse_json_body(body)
                if not isinstance(payload, Mapping) or "hub_id" not in payload or "descriptor" not in payload:
                    raise SchemaError("body requires hub_id and descriptor")
                descriptor = FeedDescriptor.from_json_dict(payload["descriptor"])
                entry, created = self.core.publish_descriptor(
                    payload["hub_id"],
                    descriptor,
                    position=payload.get("position"),
                    accuracy=payload.get("accuracy"),
                    latency_ms=payload.get("latency_ms"),
                )
                return HttpResponse.json(201 if created else 200, entry.to_json_dict())
            if not rest and method == "GET":
                self.core.record_usage(caller, "catalog_query")
                results = self.core.search(_parse_search(query))
                return HttpResponse.json(200, [e.to_json_dict() for e in results])
            if len(rest) == 1 and method == "GET":
                self.core.record_usage(caller, "descriptor_fetch")
                return HttpResponse.json(200, self.core.entry_by_hash(rest[0]).to_json_dict())

        if segments[:2] == ["catalog", "apps"]:
            rest = segments[2:]
            if not rest and method == "POST":
                payload = parse_json_body(body)
                if not isinstance(payload, Mapping) or "package" not in payload:
                    raise SchemaError("body requires a package")
                package = AppPackage.from_json_dict(payload["package"])
                entry = AppCatalogEntry(
                    app_id=str(payload.get("app_id", package.app_id)),
                    name=str(payload.get("name", package.name)),
                    version=str(payload.get("version", package.version)),
                    package=package,
                    keywords=frozenset(payload.get("keywords", ())),
                    published_at=self.core.clock.now_ms(),
                )
                if entry.app_id != package.app_id or entry.version != package.version:
                    raise SchemaError("entry app_id/version must match the package")
                return HttpResponse.json(201, self.core.publish_app(entry).to_json_dict())
            if not rest and method == "GET":
                return HttpResponse.json(200, [e.to_json_dict() for e in self.core.list_apps()])
            if len(rest) == 2 and method == "GET":
                self.core.record_usage(caller, "app_fetch")
                return HttpResponse.json(200, self.core.get_app(rest[0], rest[1]).to_json_dict())

        if segments[:2] == ["catalog", "enablers"]:
            rest = segments[2:]
            if not rest and method == "GET":
                return HttpResponse.json(200, [e.to_json_dict() for e in self.core.list_enablers()])
            if not rest and method == "POST":
                descriptor = EnablerDescriptor.from_json_dict(parse_json_body(body))
                created = self.core.publish_enabler(descriptor)
                return HttpResponse.json(201 if created else 200, descriptor.to_json_dict())

        if segments[:1] == ["accounting"] and len(segments) == 2 and method == "GET":
            return HttpResponse.json(200, self.core.usage(segments[1]).to_json_dict())

        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})


def _parse_search(query: Mapping[str, str]) -> SearchQuery:
    keywords = frozenset(t for t in query.get("q", "").split() if t)
    aggregation_class = query.get("class") or None
    center = None
    if "lat" in query or "lon" in query:
        try:
            center = (float(query["lat"]), float(query["lon"]))
        except (KeyError, ValueError) as err:
            raise SchemaError("lat and lon must both be valid decimals") from err
    k = None
    if "k" in query:
        try:
            k = int(query["k"])
        except ValueError as err:
            raise SchemaError("k must be an integer") from err
    max_results = 50
    if "max" in query:
        try:
            max_results = int(query["max"])
        except ValueError as err:
            raise SchemaError("max must be an integer") from err
    return SearchQuery(
        keywords=keywords,
        aggregation_class=aggregation_class,
        center=center,
        k=k,
        max_results=max_results,
    )
