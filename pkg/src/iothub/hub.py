"""The IoT hub service: scope-enforcing REST API over the dataflow core.

Route table:
    GET /feeds · POST /feeds · GET /feeds/{id} · DELETE /feeds/{id}
    GET /feeds/{id}/data?from&to&limit · POST /feeds/{id}/data
    GET /feeds/{id}/latest · GET /feeds/{id}/stream (server-sent events)
    POST /feeds/{id}/commands
    POST /subscriptions · DELETE /subscriptions/{id}
    POST /pipes
    POST /apps · POST /apps/{id}/start · POST /apps/{id}/stop · GET /apps/{id}/status · GET /apps
    POST /publications
    POST /tokens · DELETE /tokens/{token}
    GET /enablers · POST /enablers/{id}/instances
    GET /ui/* (static dashboard assets, unauthenticated)

Bearer tokens carry scope grants. A token may touch a feed when its strongest
grant is at least as privileged as the feed's scope: owner grants reach
everything, hub grants reach hub and global feeds, global grants reach only
global feeds. Every other mutation is owner-only.
"""

from __future__ import annotations

import json
import mimetypes
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping
from urllib.parse import parse_qs, urlsplit

from .apps import AppEngine, AppPackage
from .clock import SimClock, SimScheduler, WallClock, WallScheduler
from .dataflow import DataflowEngine
from .enablers import DeviceManager, EnablerRegistry
from .errors import (
    ConfigError,
    IoTHubError,
    MetahubUnreachable,
    SchemaError,
    ScopeViolation,
    UnknownResource,
)
from .geo import CityTable, default_city_table
from .model import (
    FeedDescriptor,
    PipeSpec,
    TypeRegistry,
    descriptor_hash,
    scope_rank,
)
from .storage import TimeSeriesStore
from .transport import UrllibTransport
from .webapi import HttpResponse, SseStream, bearer_token, parse_json_body


@dataclass(frozen=True)
class AccessToken:
    token: str
    grants: frozenset[str]
    label: str = ""

    def rank(self) -> int:
        return min(scope_rank(g) for g in self.grants)

    def to_json_dict(self) -> dict:
        return {"token": self.token, "grants": sorted(self.grants), "label": self.label}


@dataclass(frozen=True)
class PublicationRecord:
    feed_id: str
    metahub_url: str
    published_at: int
    descriptor_hash: str

    def to_json_dict(self) -> dict:
        return {
            "feed_id": self.feed_id,
            "metahub_url": self.metahub_url,
            "published_at": self.published_at,
            "descriptor_hash": self.descriptor_hash,
        }


@dataclass
class HubConfig:
    hub_id: str = "hub"
    listen_port: int = 8080
    data_dir: str | None = None
    metahub_urls: tuple[str, ...] = ()
    city_table_path: str | None = None
    clock_mode: str = "wall"  # wall | simulated
    owner_token: str | None = None
    base_uri: str | None = None
    position: Mapping[str, float] | None = None
    extra_classes: tuple[str, ...] = ()
    ui_dir: str | None = None

    def __post_init__(self):
        if not 1 <= self.listen_port <= 65535:
            raise ConfigError(f"listen_port {self.listen_port} out of range")
        if self.clock_mode not in ("wall", "simulated"):
            raise ConfigError(f"unknown clock_mode {self.clock_mode!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "HubConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as err:
            raise ConfigError(f"config file not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from err
        known = {
            "hub_id", "listen_port", "data_dir", "metahub_urls", "city_table_path",
            "clock_mode", "owner_token", "base_uri", "position", "extra_classes", "ui_dir",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "metahub_urls" in raw:
            raw["metahub_urls"] = tuple(raw["metahub_urls"])
        if "extra_classes" in raw:
            raw["extra_classes"] = tuple(raw["extra_classes"])
        try:
            return cls(**raw)
        except TypeError as err:
            raise ConfigError(f"invalid config: {err}") from err


class HubCore:
    """Wires clock, storage, dataflow, devices, apps, tokens and publication client."""

    def __init__(self, config: HubConfig, *, transport=None, clock=None, scheduler=None):
        self.config = config
        if clock is not None:
            self.clock = clock
            self.scheduler = scheduler if scheduler is not None else SimScheduler(clock)
        elif config.clock_mode == "simulated":
            self.clock = SimClock()
            self.scheduler = SimScheduler(self.clock)
        else:
            self.clock = WallClock()
            self.scheduler = WallScheduler(self.clock)
        self.registry = TypeRegistry(extra_classes=config.extra_classes)
        city_table = CityTable.from_file(config.city_table_path) if config.city_table_path else default_city_table()
        self.transport = transport or UrllibTransport()
        store = TimeSeriesStore(data_dir=config.data_dir)
        self.engine = DataflowEngine(
            clock=self.clock,
            registry=self.registry,
            store=store,
            city_table=city_table,
            hub_id=config.hub_id,
            webhook_post=self._webhook_post,
        )
        self.devices = DeviceManager(self.engine, self.scheduler)
        self.apps = AppEngine(self.engine, self.devices, self.registry)
        owner = AccessToken(
            token=config.owner_token or secrets.token_urlsafe(24),
            grants=frozenset({"private", "hub", "global"}),
            label="owner",
        )
        self.tokens: dict[str, AccessToken] = {owner.token: owner}
        self.owner_token = owner.token
        self.publications: dict[tuple[str, str], PublicationRecord] = {}
        self.subscription_owner: dict[str, str] = {}

    def _webhook_post(self, url: str, body: bytes) -> int:
        status, _ = self.transport.request("POST", url, body=body)
        return status

    @property
    def base_uri(self) -> str:
        return self.config.base_uri or f"http://localhost:{self.config.listen_port}"

    # -- tokens ------------------------------------------------------------

    def create_token(self, grants, label: str = "") -> AccessToken:
        grants = frozenset(grants)
        if not grants:
            raise SchemaError("token requires at least one grant")
        for g in grants:
            scope_rank(g)  # raises on unknown scope names
        token = AccessToken(token=secrets.token_urlsafe(24), grants=grants, label=label)
        self.tokens[token.token] = token
        return token

    def delete_token(self, token: str) -> None:
        if token == self.owner_token:
            raise SchemaError("the owner token cannot be deleted")
        if token not in self.tokens:
            raise UnknownResource("unknown token")
        del self.tokens[token]

    def authorize(self, token: str | None, feed_scope: str) -> bool:
        """A grant reaches every feed whose scope is at least as open as the grant."""
        record = self.tokens.get(token or "")
        if record is None:
            return False
        return record.rank() <= scope_rank(feed_scope)

    def is_owner(self, token: str | None) -> bool:
        record = self.tokens.get(token or "")
        return record is not None and record.rank() == 0

    # -- meta-hub client -----------------------------------------------------

    def register_with_metahub(self, metahub_url: str) -> None:
        payload = {"hub_id": self.config.hub_id, "base_uri": self.base_uri}
        status, body = self.transport.request(
            "POST", metahub_url.rstrip("/") + "/hubs", body=json.dumps(payload).encode("utf-8")
        )
        if status >= 400:
            raise MetahubUnreachable(f"meta-hub registration failed ({status}): {body[:200]!r}")

    def register_with_metahubs(self) -> list[str]:
        registered = []
        for url in self.config.metahub_urls:
            self.register_with_metahub(url)
            registered.append(url)
        return registered

    def publish_to_metahub(self, feed_id: str, metahub_url: str) -> PublicationRecord:
        descriptor = self.engine.descriptor(feed_id)
        if descriptor.scope != "global":
            raise ScopeViolation(f"feed {feed_id!r} is not global-scoped")
        digest = descriptor_hash(descriptor, self.registry)
        self.register_with_metahub(metahub_url)
        payload = {
            "hub_id": self.config.hub_id,
            "descriptor": descriptor.to_json_dict(),
            "position": dict(self.config.position) if self.config.position else None,
            "accuracy": None,
            "latency_ms": None,
        }
        status, body = self.transport.request(
            "POST", metahub_url.rstrip("/") + "/catalog/feeds", body=json.dumps(payload).encode("utf-8")
        )
        if status >= 400:
            raise SchemaError(f"meta-hub rejected descriptor ({status}): {body[:200]!r}")
        record = PublicationRecord(
            feed_id=feed_id,
            metahub_url=metahub_url,
            published_at=self.clock.now_ms(),
            descriptor_hash=digest,
        )
        self.publications[(feed_id, metahub_url)] = record
        return record

    def close(self) -> None:
        if isinstance(self.scheduler, WallScheduler):
            self.scheduler.shutdown()
        self.engine.close()


class HubApi:
    """Framework-free request handler implementing the hub route table."""

    def __init__(self, core: HubCore):
        self.core = core

    # Route dispatch works on normalized segments; every branch below returns
    # an HttpResponse, and IoTHubError maps to its wire status.
    def handle_request(self, method: str, path: str, headers: Mapping[str, str], body: bytes | None) -> HttpResponse:
        split = urlsplit(path)
        segments = [s for s in split.path.split("/") if s]
        query = {k: v[-1] for k, v in parse_qs(split.query).items()}
        try:
            if segments[:1] == ["ui"]:
                return self._static(segments[1:])
            token = bearer_token(headers)
            if token is None or token not in self.core.tokens:
                return HttpResponse.json(401, {"error": "unauthorized", "detail": "missing or unknown bearer token"})
            return self._route(method, segments, query, token, body)
        except IoTHubError as err:
            return HttpResponse.from_error(err)

    def _route(self, method: str, segments: list[str], query: dict, token: str, body: bytes | None) -> HttpResponse:
        if not segments:
            return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})
        head = segments[0]
        if head == "feeds":
            return self._feeds(method, segments[1:], query, token, body)
        if head == "subscriptions":
            return self._subscriptions(method, segments[1:], token, body)
        if head == "pipes" and method == "POST" and len(segments) == 1:
            return self._create_pipe(token, body)
        if head == "apps":
            return self._apps(method, segments[1:], token, body)
        if head == "publications" and method == "POST" and len(segments) == 1:
            return self._publish(token, body)
        if head == "tokens":
            return self._tokens(method, segments[1:], token, body)
        if head == "enablers":
            return self._enablers(method, segments[1:], token, body)
        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

    # -- helpers -------------------------------------------------------------

    def _require_owner(self, token: str) -> None:
        if not self.core.is_owner(token):
            raise ScopeViolation("owner token required")

    def _require_feed_access(self, token: str, feed_id: str) -> FeedDescriptor:
        descriptor = self.core.engine.descriptor(feed_id)  # raises UnknownFeed
        if not self.core.authorize(token, descriptor.scope):
            raise ScopeViolation(f"token lacks access to feed {feed_id!r}")
        return descriptor

    def _token_rank(self, token: str) -> int:
        return self.core.tokens[token].rank()

    # -- feeds -----------------------------------------------------------------

    def _feeds(self, method: str, rest: list[str], query: dict, token: str, body: bytes | None) -> HttpResponse:
        if not rest:
            if method == "GET":
                rank = self._token_rank(token)
                visible = [d for d in self.core.engine.descriptors() if rank <= scope_rank(d.scope)]
                return HttpResponse.json(200, [d.to_json_dict() for d in visible])
            if method == "POST":
                self._require_owner(token)
                descriptor = FeedDescriptor.from_json_dict(parse_json_body(body))
                if descriptor.kind == "derived":
                    if descriptor.pipe is None:
                        raise SchemaError("derived descriptor requires a pipe")
                    created = self.core.engine.create_derived_feed(
                        descriptor.pipe,
                        feed_id=descriptor.id,
                        scope=descriptor.scope,
                        keywords=descriptor.keywords,
                    )
                else:
                    created = self.core.engine.register_feed(descriptor)
                return HttpResponse.json(201, created.to_json_dict())
            return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

        feed_id = rest[0]
        tail = rest[1:]
        if not tail:
            if method == "GET":
                descriptor = self._require_feed_access(token, feed_id)
                return HttpResponse.json(200, descriptor.to_json_dict())
            if method == "DELETE":
                self._require_owner(token)
                self.core.engine.descriptor(feed_id)
                self.core.engine.remove_feed(feed_id)
                return HttpResponse.empty(204)
        elif tail == ["data"]:
            if method == "GET":
                self._require_feed_access(token, feed_id)
                from_ms = _int_param(query, "from", -(2**62))
                to_ms = _int_param(query, "to", 2**62)
                limit = _int_param(query, "limit", 1000)
                if limit < 1:
                    raise SchemaError("limit must be >= 1")
                if from_ms > to_ms:
                    raise SchemaError("from must be <= to")
                samples = self.core.engine.query(feed_id, from_ms, to_ms, limit)
                return HttpResponse.json(200, [s.to_json_dict() for s in samples])
            if method == "POST":
                self._require_feed_access(token, feed_id)
                payload = parse_json_body(body)
                if not isinstance(payload, Mapping) or "values" not in payload:
                    raise SchemaError("body must be an object with a 'values' map")
                values = payload["values"]
                t_ms = payload.get("t_ms")
                seq = payload.get("seq")
                self.core.engine.publish(feed_id, values, t_ms=t_ms, seq=seq)
                sample = self.core.engine.latest(feed_id)
                return HttpResponse.json(201, sample.to_json_dict())
        elif tail == ["latest"] and method == "GET":
            self._require_feed_access(token, feed_id)
            sample = self.core.engine.latest(feed_id)
            return HttpResponse.json(200, sample.to_json_dict() if sample else None)
        elif tail == ["stream"] and method == "GET":
            self._require_feed_access(token, feed_id)
            subscription, channel = self.core.engine.subscribe_stream(feed_id)
            stream = SseStream(self.core.engine, subscription.id, channel)
            headers = {"Content-Type": "text/event-stream", "Cache-Control": "no-cache"}
            return HttpResponse(status=200, body=None, headers=headers, stream=stream)
        elif tail == ["commands"] and method == "POST":
            self._require_feed_access(token, feed_id)
            payload = parse_json_body(body)
            command = payload.get("command") if isinstance(payload, Mapping) else None
            if command not in ("toggle", "set"):
                raise SchemaError("command must be 'toggle' or 'set'")
            state = self.core.devices.apply_command(feed_id, command, payload.get("on"))
            return HttpResponse.json(200, {"feed_id": feed_id, "on": state})
        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

    # -- subscriptions ---------------------------------------------------------

    def _subscriptions(self, method: str, rest: list[str], token: str, body: bytes | None) -> HttpResponse:
        if method == "POST" and not rest:
            payload = parse_json_body(body)
            feed_id = payload.get("feed_id") if isinstance(payload, Mapping) else None
            callback_url = payload.get("callback_url") if isinstance(payload, Mapping) else None
            if not isinstance(feed_id, str) or not isinstance(callback_url, str):
                raise SchemaError("body requires feed_id and callback_url strings")
            self._require_feed_access(token, feed_id)
            subscription = self.core.engine.subscribe_webhook(feed_id, callback_url)
            self.core.subscription_owner[subscription.id] = token
            return HttpResponse.json(201, subscription.to_json_dict())
        if method == "DELETE" and len(rest) == 1:
            sub_id = rest[0]
            creator = self.core.subscription_owner.get(sub_id)
            if creator != token and not self.core.is_owner(token):
                raise ScopeViolation("only the creator or the owner may remove a subscription")
            self.core.engine.unsubscribe(sub_id)
            self.core.subscription_owner.pop(sub_id, None)
            return HttpResponse.empty(204)
        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

    # -- pipes -------------------------------------------------------------------

    def _create_pipe(self, token: str, body: bytes | None) -> HttpResponse:
        self._require_owner(token)
        pipe = PipeSpec.from_json_dict(parse_json_body(body))
        descriptor = self.core.engine.create_derived_feed(pipe)
        return HttpResponse.json(201, descriptor.to_json_dict())

    # -- apps ---------------------------------------------------------------------

    def _apps(self, method: str, rest: list[str], token: str, body: bytes | None) -> HttpResponse:
        if not rest:
            if method == "POST":
                self._require_owner(token)
                package = AppPackage.from_json_dict(parse_json_body(body))
                status = self.core.apps.install(package)
                return HttpResponse.json(201, status.to_json_dict())
            if method == "GET":
                if self._token_rank(token) > 1:
                    raise ScopeViolation("hub grant required")
                statuses = [self.core.apps.status(app_id).to_json_dict() for app_id in self.core.apps.app_ids()]
                return HttpResponse.json(200, statuses)
        elif len(rest) == 2:
            app_id, action = rest
            if action == "start" and method == "POST":
                self._require_owner(token)
                return HttpResponse.json(200, self.core.apps.start(app_id).to_json_dict())
            if action == "stop" and method == "POST":
                self._require_owner(token)
                return HttpResponse.json(200, self.core.apps.stop(app_id).to_json_dict())
            if action == "status" and method == "GET":
                if self._token_rank(token) > 1:
                    raise ScopeViolation("hub grant required")
                return HttpResponse.json(200, self.core.apps.status(app_id).to_json_dict())
        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

    # -- publications ----------------------------------------------------------------

    def _publish(self, token: str, body: bytes | None) -> HttpResponse:
        self._require_owner(token)
        payload = parse_json_body(body)
        feed_id = payload.get("feed_id") if isinstance(payload, Mapping) else None
        metahub_url = payload.get("metahub_url") if isinstance(payload, Mapping) else None
        if not isinstance(feed_id, str) or not isinstance(metahub_url, str):
            raise SchemaError("body requires feed_id and metahub_url strings")
        record = self.core.publish_to_metahub(feed_id, metahub_url)
        return HttpResponse.json(201, record.to_json_dict())

    # -- tokens -------------------------------------------------------------------------

    def _tokens(self, method: str, rest: list[str], token: str, body: bytes | None) -> HttpResponse:
        self._require_owner(token)
        if method == "POST" and not rest:
            payload = parse_json_body(body)
            grants = payload.get("grants") if isinstance(payload, Mapping) else None
            if not isinstance(grants, list) or not grants:
                raise SchemaError("body requires a nonempty grants list")
            label = payload.get("label", "")
            created = self.core.create_token(grants, label=str(label))
            return HttpResponse.json(201, created.to_json_dict())
        if method == "DELETE" and len(rest) == 1:
            self.core.delete_token(rest[0])
            return HttpResponse.empty(204)
        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

    # -- enablers ----------------------------------------------------------------------

    def _enablers(self, method: str, rest: list[str], token: str, body: bytes | None) -> HttpResponse:
        if method == "GET" and not rest:
            if self._token_rank(token) > 1:
                raise ScopeViolation("hub grant required")
            return HttpResponse.json(200, [e.to_json_dict() for e in self.core.devices.list_enablers()])
        if method == "POST" and len(rest) == 2 and rest[1] == "instances":
            self._require_owner(token)
            config = parse_json_body(body) if body else {}
            feed_ids = self.core.devices.instantiate(rest[0], config)
            return HttpResponse.json(201, {"feed_ids": feed_ids})
        return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such route"})

    # -- static dashboard ---------------------------------------------------------------

    def _static(self, rest: list[str]) -> HttpResponse:
        ui_dir = self.core.config.ui_dir
        if not ui_dir:
            return HttpResponse.json(404, {"error": "unknown_resource", "detail": "dashboard not installed"})
        root = Path(ui_dir).resolve()
        relative = "/".join(rest) or "index.html"
        target = (root / relative).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            return HttpResponse.json(404, {"error": "unknown_resource", "detail": "no such asset"})
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        return HttpResponse(status=200, body=target.read_bytes(), headers={"Content-Type": content_type})


def _int_param(query: Mapping[str, str], name: str, default: int) -> int:
    raw = query.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as err:
        raise SchemaError(f"query parameter {name!r} must be an integer") from err
