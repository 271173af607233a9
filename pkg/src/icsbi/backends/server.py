"""Protocol-v1 server harness: expose any in-context backend over stdio or TCP.

Run ``python -m icsbi.backends.server`` to serve the built-in reference
backend; the same loop backs loopback testing of the bridge client. Request
handling errors become structured error responses and the loop keeps serving.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys

import numpy as np

from .base import BackendError, ContextSet, InContextBackend
from .bridge import PROTOCOL_VERSION
from .reference import ReferenceBackend

__all__ = ["serve", "handle_request", "main"]


def _ok(rid, payload) -> dict:
    return {"id": rid, "status": "ok", "payload": payload, "error": None}


def _err(rid, message: str) -> dict:
    return {"id": rid, "status": "error", "payload": None, "error": str(message)}


def handle_request(backend: InContextBackend, request: dict) -> tuple[dict, bool]:
    """Dispatch one parsed request; returns (response, keep_serving)."""
    rid = request.get("id")
    op = request.get("op")
    payload = request.get("payload") or {}
    try:
        if op == "handshake":
            version = payload.get("version")
            if version != PROTOCOL_VERSION:
                return _err(rid, f"unsupported protocol version {version!r}"), True
            caps = backend.capabilities
            return (
                _ok(
                    rid,
                    {
                        "version": PROTOCOL_VERSION,
                        "capabilities": {
                            "max_context": caps.max_context,
                            "max_features": caps.max_features,
                        },
                    },
                ),
                True,
            )
        if op == "regress":
            context = ContextSet(
                features=np.asarray(payload["features"], dtype=float),
                targets=np.asarray(payload["targets"], dtype=float),
            )
            predictives = backend.regress_predict(
                context,
                np.asarray(payload["queries"], dtype=float),
                seed=payload.get("seed"),
                grid_size=int(payload.get("grid_size", 512)),
            )
            return (
                _ok(
                    rid,
                    {
                        "predictives": [
                            {"grid": p.grid.tolist(), "log_density": p.log_density.tolist()}
                            for p in predictives
                        ]
                    },
                ),
                True,
            )
        if op == "classify":
            context = ContextSet(
                features=np.asarray(payload["features"], dtype=float),
                targets=np.asarray(payload["labels"], dtype=float),
            )
            classes, probs = backend.classify_predict(
                context, np.asarray(payload["queries"], dtype=float)
            )
            return (
                _ok(rid, {"classes": classes.tolist(), "probabilities": probs.tolist()}),
                True,
            )
        if op == "shutdown":
            return _ok(rid, {}), False
        return _err(rid, f"unknown op {op!r}"), True
    except (BackendError, ValueError, KeyError, TypeError) as exc:
        return _err(rid, f"{type(exc).__name__}: {exc}"), True


def serve(backend: InContextBackend, reader, writer) -> None:
    """Single-session request loop over line-based streams."""
    for line in reader:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except ValueError as exc:
            writer.write(json.dumps(_err(None, f"bad JSON: {exc}")) + "\n")
            writer.flush()
            continue
        response, keep_going = handle_request(backend, request)
        writer.write(json.dumps(response, allow_nan=False) + "\n")
        writer.flush()
        if not keep_going:
            return


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Serve the reference backend over protocol v1")
    parser.add_argument("--tcp", metavar="HOST:PORT", help="listen on TCP instead of stdio")
    args = parser.parse_args(argv)
    backend = ReferenceBackend()
    if args.tcp:
        host, port = args.tcp.rsplit(":", 1)
        with socket.create_server((host, int(port))) as server:
            conn, _ = server.accept()
            with conn, conn.makefile("r") as reader, conn.makefile("w") as writer:
                serve(backend, reader, writer)
        return 0
    serve(backend, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
