"""Thin stdlib HTTP adapter: maps sockets onto a framework-free request handler.

Both the hub and the meta-hub APIs expose ``handle_request``; this module puts
either behind a threading HTTP server, including server-sent event streaming.
"""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def make_server(api, port: int, host: str = "0.0.0.0") -> ThreadingHTTPServer:
    """Binds immediately; raises OSError when the port is taken."""

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _dispatch(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else None
            response = api.handle_request(self.command, self.path, dict(self.headers.items()), body)
            if response.stream is not None:
                self._stream(response)
                return
            payload = response.body or b""
            self.send_response(response.status)
            for key, value in response.headers.items():
                self.send_header(key, value)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _stream(self, response) -> None:
            self.send_response(response.status)
            for key, value in response.headers.items():
                self.send_header(key, value)
            self.send_header("Connection", "close")
            self.end_headers()
            try:
                for event in response.stream.events(timeout_s=0.5):
                    self.wfile.write(event)
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                response.stream.close()

        do_GET = _dispatch
        do_POST = _dispatch
        do_DELETE = _dispatch

        def log_message(self, format, *args):  # noqa: A002 - stdlib signature
            pass

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True, name="iothub-httpd")
    thread.start()
    return thread
