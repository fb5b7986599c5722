"""Shared wire plumbing for the hub and meta-hub request handlers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import IoTHubError, SchemaError
from .model import canonical_json

# HTTP status for each machine-readable error code.
STATUS_BY_CODE = {
    "schema_error": 400,
    "invalid_descriptor": 400,
    "type_error": 400,
    "arity_error": 400,
    "config_error": 400,
    "empty_table": 400,
    "invalid_package": 400,
    "invalid_uri": 400,
    "not_an_actuator": 400,
    "out_of_order": 400,
    "scope_violation": 403,
    "unknown_feed": 404,
    "unknown_resource": 404,
    "unknown_enabler": 404,
    "unregistered_hub": 404,
    "cycle_error": 409,
    "duplicate_id": 409,
    "dependency_conflict": 409,
    "duplicate_version": 409,
    "already_running": 409,
    "not_running": 409,
    "not_bound": 409,
    "metahub_unreachable": 502,
}


@dataclass
class HttpResponse:
    status: int
    body: bytes | None = None
    headers: dict[str, str] = field(default_factory=dict)
    stream: Any = None  # SseStream for event-stream endpoints

    @classmethod
    def json(cls, status: int, payload: Any) -> "HttpResponse":
        return cls(status=status, body=canonical_json(payload), headers={"Content-Type": "application/json"})

    @classmethod
    def empty(cls, status: int = 204) -> "HttpResponse":
        return cls(status=status, body=b"")

    @classmethod
    def from_error(cls, err: IoTHubError) -> "HttpResponse":
        return cls.json(STATUS_BY_CODE.get(err.code, 400), err.to_json_dict())


def parse_json_body(body: bytes | None) -> Any:
    if not body:
        raise SchemaError("request body required")
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise SchemaError(f"malformed JSON body: {err}") from err


def bearer_token(headers: Mapping[str, str]) -> str | None:
    for key, value in headers.items():
        if key.lower() == "authorization":
            if value.lower().startswith("bearer "):
                return value[7:].strip()
            return None
    return None


def header(headers: Mapping[str, str], name: str) -> str | None:
    for key, value in headers.items():
        if key.lower() == name.lower():
            return value
    return None


class SseStream:
    """A live event-stream handle; each event carries one canonical sample record."""

    def __init__(self, engine, subscription_id: str, channel):
        self.engine = engine
        self.subscription_id = subscription_id
        self.channel = channel

    def events(self, timeout_s: float | None = None):
        while True:
            sample = self.channel.take(timeout_s=timeout_s)
            if sample is None:
                if self.channel.closed:
                    return
                continue
            yield b"data: " + canonical_json(sample.to_json_dict()) + b"\n\n"

    def close(self) -> None:
        try:
            self.engine.unsubscribe(self.subscription_id)
        except IoTHubError:
            pass
