"""Wire-protocol client: any process speaking protocol v1 acts as a backend.

Protocol v1: newline-delimited JSON over the peer's stdio (or a TCP
connection). Requests carry a monotonically increasing ``id``, an ``op`` in
{handshake, regress, classify, shutdown}, and an op-specific payload of
row-major nested arrays; responses echo the id with ``status`` "ok" or
"error". Responses may arrive out of order; the client reassociates by id.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
import threading
from typing import Optional

import numpy as np

from .base import (
    DEFAULT_GRID_SIZE,
    BackendCapabilities,
    BackendError,
    ContextSet,
    InContextBackend,
    PredictiveDistribution1D,
    check_query_shape,
)

__all__ = ["BridgeBackend", "BridgeError", "PROTOCOL_VERSION"]

PROTOCOL_VERSION = "1"
DEFAULT_TIMEOUT = 120.0


class BridgeError(RuntimeError):
    """Transport- or protocol-level failure (as opposed to a peer error reply)."""


class _LineTransport:
    """Owns the peer connection and matches response lines to request ids."""

    def __init__(self, reader, writer, on_close=None):
        self._reader = reader
        self._writer = writer
        self._on_close = on_close
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._responses: dict[int, dict] = {}
        self._dead: Optional[str] = None
        self._thread = threading.Thread(target=self._read_loop, daemon=True)
        self._thread.start()

    def _read_loop(self):
        try:
            for line in self._reader:
                if not line.strip():
                    continue
                try:
                    message = json.loads(line)
                    rid = int(message["id"])
                except (ValueError, KeyError, TypeError):
                    with self._cond:
                        self._dead = f"unparseable response line: {line[:200]!r}"
                        self._cond.notify_all()
                    return
                with self._cond:
                    self._responses[rid] = message
                    self._cond.notify_all()
        except (OSError, ValueError):
            pass
        finally:
            with self._cond:
                if self._dead is None:
                    self._dead = "peer closed the connection"
                self._cond.notify_all()

    def send(self, request: dict) -> None:
        line = json.dumps(request, allow_nan=False) + "\n"
        try:
            self._writer.write(line)
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise BridgeError(f"failed to send request: {exc}") from exc

    def wait_for(self, rid: int, timeout: float) -> dict:
        with self._cond:
            ok = self._cond.wait_for(
                lambda: rid in self._responses or self._dead is not None, timeout
            )
            if rid in self._responses:
                return self._responses.pop(rid)
            if not ok:
                raise BridgeError(f"timed out after {timeout}s waiting for response {rid}")
            raise BridgeError(self._dead or "connection lost")

    def close_streams(self):
        try:
            self._writer.close()
        except OSError:
            pass

    def close(self):
        self.close_streams()
        if self._on_close is not None:
            self._on_close()


class BridgeBackend(InContextBackend):
    """In-context backend served by an external protocol-v1 process."""

    def __init__(self, transport: _LineTransport, timeout: float = DEFAULT_TIMEOUT):
        self._transport = transport
        self._timeout = timeout
        self._next_id = 0
        self._id_lock = threading.Lock()
        self._capabilities = self._handshake()

    # -- construction --------------------------------------------------------

    @classmethod
    def open(cls, target: str, timeout: float = DEFAULT_TIMEOUT) -> "BridgeBackend":
        """Spawn ``target`` as a child process, or connect to ``tcp:<host>:<port>``."""
        if target.startswith("tcp:"):
            _, host, port = target.split(":")
            return cls.connect_tcp(host, int(port), timeout=timeout)
        return cls.spawn(shlex.split(target), timeout=timeout)

    @classmethod
    def spawn(cls, command: list[str], timeout: float = DEFAULT_TIMEOUT) -> "BridgeBackend":
        proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        transport = _LineTransport(proc.stdout, proc.stdin, on_close=proc.terminate)
        backend = cls(transport, timeout=timeout)
        backend._process = proc
        return backend

    @classmethod
    def connect_tcp(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> "BridgeBackend":
        sock = socket.create_connection((host, port), timeout=timeout)
        reader = sock.makefile("r")
        writer = sock.makefile("w")
        return cls(_LineTransport(reader, writer, on_close=sock.close), timeout=timeout)

    # -- protocol ------------------------------------------------------------

    def _call(self, op: str, payload: dict) -> dict:
        with self._id_lock:
            rid = self._next_id
            self._next_id += 1
        self._transport.send({"id": rid, "op": op, "payload": payload})
        response = self._transport.wait_for(rid, self._timeout)
        if response.get("status") != "ok":
            raise BackendError(
                f"peer error for {op!r}: {response.get('error', 'unspecified error')}"
            )
        return response.get("payload") or {}

    def _handshake(self) -> BackendCapabilities:
        payload = self._call("handshake", {"version": PROTOCOL_VERSION})
        version = payload.get("version")
        if version != PROTOCOL_VERSION:
            self.close()
            raise BridgeError(
                f"protocol version mismatch: peer speaks {version!r}, expected {PROTOCOL_VERSION!r}"
            )
        caps = payload.get("capabilities", {})
        return BackendCapabilities(
            max_context=int(caps.get("max_context", 10_000)),
            max_features=int(caps.get("max_features", 500)),
        )

    @property
    def capabilities(self) -> BackendCapabilities:
        return self._capabilities

    def regress_predict(
        self,
        context: ContextSet,
        queries: np.ndarray,
        seed: Optional[int] = None,
        grid_size: int = DEFAULT_GRID_SIZE,
    ) -> list[PredictiveDistribution1D]:
        queries = check_query_shape(context, queries)
        self._capabilities.check(context.size, context.n_features)
        payload = self._call(
            "regress",
            {
                "features": context.features.tolist(),
                "targets": np.asarray(context.targets, dtype=float).tolist(),
                "queries": queries.tolist(),
                "seed": None if seed is None else int(seed),
                "grid_size": int(grid_size),
            },
        )
        out = []
        for entry in payload["predictives"]:
            out.append(
                PredictiveDistribution1D(
                    np.asarray(entry["grid"], dtype=float),
                    np.asarray(entry["log_density"], dtype=float),
                )
            )
        return out

    def classify_predict(self, context: ContextSet, queries: np.ndarray):
        queries = check_query_shape(context, queries)
        self._capabilities.check(context.size, context.n_features)
        payload = self._call(
            "classify",
            {
                "features": context.features.tolist(),
                "labels": np.asarray(context.targets, dtype=float).tolist(),
                "queries": queries.tolist(),
            },
        )
        return (
            np.asarray(payload["classes"], dtype=float),
            np.asarray(payload["probabilities"], dtype=float),
        )

    def shutdown(self) -> None:
        """Ask the peer to exit, then release the transport without force."""
        try:
            self._call("shutdown", {})
        except (BridgeError, BackendError):
            self.close()
            return
        self._transport.close_streams()
        proc = getattr(self, "_process", None)
        if proc is not None:
            try:
                proc.wait(timeout=30)
            except subprocess.TimeoutExpired:
                proc.terminate()

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()
