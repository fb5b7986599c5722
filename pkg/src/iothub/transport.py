"""HTTP client abstraction: real sockets via urllib, or in-process API routing.

The in-process transport lets a whole federation (hubs + meta-hub) run inside
one process for demos and tests, exercising exactly the same request handlers
as the network path.
"""

from __future__ import annotations

import urllib.error
import urllib.request
from typing import Mapping

from .errors import MetahubUnreachable


class UrllibTransport:
    def __init__(self, timeout_s: float = 5.0):
        self.timeout_s = timeout_s

    def request(
        self,
        method: str,
        url: str,
        *,
        body: bytes | None = None,
        headers: Mapping[str, str] | None = None,
    ) -> tuple[int, bytes]:
        request = urllib.request.Request(url, data=body, method=method)
        request.add_header("Content-Type", "application/json")
        for key, value in (headers or {}).items():
            request.add_header(key, value)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                return response.status, response.read()
        except urllib.error.HTTPError as err:
            return err.code, err.read()
        except (urllib.error.URLError, OSError) as err:
            raise MetahubUnreachable(f"cannot reach {url}: {err}") from err


class InProcessTransport:
    """Routes requests to registered in-process APIs by base-URL prefix."""

    def __init__(self):
        self._apis: dict[str, object] = {}

    def register(self, base_url: str, api) -> None:
        self._apis[base_url.rstrip("/")] = api

    def request(
        self,
        method: str,
        url: str,
        *,
        body: bytes | None = None,
        headers: Mapping[str, str] | None = None,
    ) -> tuple[int, bytes]:
        for base, api in sorted(self._apis.items(), key=lambda kv: -len(kv[0])):
            if url == base or url.startswith(base + "/"):
                path = url[len(base):] or "/"
                response = api.handle_request(method, path, dict(headers or {}), body)
                return response.status, response.body or b""
        raise MetahubUnreachable(f"no in-process API registered for {url}")
