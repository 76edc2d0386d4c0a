"""Newline-delimited JSON bridge to external agents and waypoint predictors.

A session holds one connection and allows one request in flight. Endpoints
are ``host:port`` (or ``tcp://host:port``) for a socket, or ``cmd:<shell
command>`` for a child process speaking the protocol on stdin/stdout.

Agent requests carry ``{"role": "agent", "episode_id", "step",
"instruction", "candidates", "pose"}`` and expect ``{"choice": i}`` or
``{"stop": true}``. Predictor requests carry ``{"role": "predictor",
"episode_id", "step", "pose", "scan"}`` and expect a waypoint grid document.
"""
from __future__ import annotations

import json
import os
import select
import shlex
import socket
import socketserver
import subprocess
import threading
import time

from .errors import BridgeTimeout, ProtocolError

DEFAULT_TIMEOUT = 30.0


class BridgeSession:
    def __init__(self, read_fd, write, timeout=DEFAULT_TIMEOUT, on_close=None):
        self._fd = read_fd
        self._write = write
        self.timeout = float(timeout)
        self._buf = b""
        self._on_close = on_close
        self._busy = threading.Lock()

    @classmethod
    def connect(cls, endpoint: str, timeout=DEFAULT_TIMEOUT):
        if endpoint.startswith("cmd:"):
            proc = subprocess.Popen(shlex.split(endpoint[4:]), stdin=subprocess.PIPE,
                                    stdout=subprocess.PIPE)

            def write(data):
                proc.stdin.write(data)
                proc.stdin.flush()

            def close():
                proc.stdin.close()
                try:
                    proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    proc.kill()
                proc.stdout.close()

            return cls(proc.stdout.fileno(), write, timeout, close)
        addr = endpoint[6:] if endpoint.startswith("tcp://") else endpoint
        host, _, port = addr.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad bridge endpoint {endpoint!r}")
        sock = socket.create_connection((host, int(port)), timeout=timeout)
        return cls(sock.fileno(), sock.sendall, timeout, sock.close)

    def _readline(self):
        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            left = deadline - time.monotonic()
            if left <= 0:
                raise BridgeTimeout(f"no response within {self.timeout:g} s")
            ready, _, _ = select.select([self._fd], [], [], left)
            if not ready:
                continue
            chunk = os.read(self._fd, 65536)
            if not chunk:
                raise ProtocolError("bridge closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def request(self, payload: dict) -> dict:
        if not self._busy.acquire(blocking=False):
            raise ProtocolError("a request is already in flight on this session")
        try:
            self._write((json.dumps(payload) + "\n").encode())
            line = self._readline()
        finally:
            self._busy.release()
        try:
            resp = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"response is not JSON: {line[:80]!r}") from None
        if not isinstance(resp, dict):
            raise ProtocolError("response must be a JSON object")
        return resp

    def close(self):
        if self._on_close is not None:
            self._on_close()
            self._on_close = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def bridge_session(endpoint, requests, timeout=DEFAULT_TIMEOUT):
    """Send each request in order over one session and collect the responses."""
    with BridgeSession.connect(endpoint, timeout) as s:
        return [s.request(r) for r in requests]


# --------------------------------------------------------------------------
# serving


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                resp = self.server.handler(json.loads(line))
            except Exception as exc:  # report, keep serving
                resp = {"error": str(exc)}
            self.wfile.write((json.dumps(resp) + "\n").encode())
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve(handler, host="127.0.0.1", port=0):
    """Serve ``handler(request) -> response`` on a background thread.

    Returns (server, endpoint); call ``server.shutdown()`` when done.
    """
    server = _Server((host, port), _Handler)
    server.handler = handler
    threading.Thread(target=server.serve_forever, daemon=True).start()
    h, p = server.server_address[:2]
    return server, f"{h}:{p}"


def serve_stdio(handler, stdin=None, stdout=None):
    """Answer requests line by line on stdin/stdout (for ``cmd:`` endpoints)."""
    import sys

    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(json.dumps(handler(json.loads(line))) + "\n")
        stdout.flush()
