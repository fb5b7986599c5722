"""Exception hierarchy shared by the hub, meta-hub, and dataflow layers."""

from __future__ import annotations


class IoTHubError(Exception):
    """Base error; ``code`` is the machine-readable identifier used on the wire."""

    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_json_dict(self) -> dict:
        body = {"error": self.code, "detail": self.message}
        body.update(self.details)
        return body


class SchemaError(IoTHubError):
    code = "schema_error"


class InvalidDescriptor(IoTHubError):
    code = "invalid_descriptor"


class UnknownFeed(IoTHubError):
    code = "unknown_feed"


class UnknownResource(IoTHubError):
    code = "unknown_resource"


class DuplicateId(IoTHubError):
    code = "duplicate_id"


class CycleError(IoTHubError):
    code = "cycle_error"


class PipeTypeError(IoTHubError):
    code = "type_error"

    def __init__(self, message: str = "", operator: str | None = None, **details):
        super().__init__(message, **details)
        self.operator = operator
        if operator is not None:
            self.details["operator"] = operator


class ArityError(IoTHubError):
    code = "arity_error"


class ConfigError(IoTHubError):
    code = "config_error"


class EmptyTable(IoTHubError):
    code = "empty_table"


class OutOfOrder(IoTHubError):
    code = "out_of_order"


class ScopeViolation(IoTHubError):
    code = "scope_violation"


class NotAnActuator(IoTHubError):
    code = "not_an_actuator"


class UnknownEnabler(IoTHubError):
    code = "unknown_enabler"


class DependencyConflict(IoTHubError):
    code = "dependency_conflict"


class NotBound(IoTHubError):
    code = "not_bound"


class AlreadyRunning(IoTHubError):
    code = "already_running"


class NotRunning(IoTHubError):
    code = "not_running"


class InvalidUri(IoTHubError):
    code = "invalid_uri"


class UnregisteredHub(IoTHubError):
    code = "unregistered_hub"


class DuplicateVersion(IoTHubError):
    code = "duplicate_version"


class InvalidPackage(IoTHubError):
    code = "invalid_package"


class MetahubUnreachable(IoTHubError):
    code = "metahub_unreachable"
