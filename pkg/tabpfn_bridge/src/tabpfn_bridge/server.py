"""Protocol-v1 server wrapping the pre-trained TabPFN regressor and classifier.

Speaks newline-delimited JSON over stdio (or a single TCP connection):
requests carry ``{"id", "op", "payload"}`` with ops handshake / regress /
classify / shutdown; responses echo the id with ``status`` "ok"/"error".
Regression responses return full predictive distributions as (grid,
log_density) pairs normalized to integrate to 1; classification responses
return class probability vectors.

The model is fit per request on the supplied context (in-context usage; no
state is kept between calls). Model-loading or prediction failures produce
structured error responses and the server keeps serving. Device selection:
``TABPFN_BRIDGE_DEVICE`` environment variable (default ``cpu``).
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
from dataclasses import dataclass

import numpy as np

PROTOCOL_VERSION = "1"
MAX_CONTEXT = 10_000
MAX_FEATURES = 500
MIN_GRID = 32
DEFAULT_GRID = 512


@dataclass(frozen=True)
class ServerConfig:
    device: str = "cpu"
    grid_size: int = DEFAULT_GRID
    model: str = "tabpfn"  # "tabpfn" | "fake" (deterministic self-test model)

    def __post_init__(self):
        if self.grid_size < MIN_GRID:
            raise ValueError(f"grid size must be >= {MIN_GRID}")


# ---------------------------------------------------------------------------
# Model adapters. Both expose:
#   fit_predict_density(x, y, queries, grid_size) -> (grids, log_densities)
#   fit_predict_proba(x, labels, queries) -> (classes, probabilities)
# ---------------------------------------------------------------------------


class TabPfnModels:
    """Lazy wrapper around the real TabPFN regressor/classifier."""

    def __init__(self, device: str):
        from tabpfn import TabPFNClassifier, TabPFNRegressor  # deferred: heavy import

        self._regressor = TabPFNRegressor(device=device)
        self._classifier = TabPFNClassifier(device=device)

    def fit_predict_density(self, x, y, queries, grid_size):
        self._regressor.fit(x, y)
        try:
            return self._full_distribution_density(queries, grid_size)
        except Exception:
            return self._quantile_density(queries, grid_size)

    def _full_distribution_density(self, queries, grid_size):
        """Exact bar-distribution densities evaluated on a per-query grid."""
        out = self._regressor.predict(queries, output_type="full")
        logits = np.asarray(out["logits"].detach().cpu().numpy(), dtype=float)
        borders = np.asarray(
            out["criterion"].borders.detach().cpu().numpy(), dtype=float
        )
        probs = _softmax(logits)
        widths = np.diff(borders)
        grids, log_densities = [], []
        for q in range(queries.shape[0]):
            density_bar = probs[q] / np.maximum(widths, 1e-300)
            finite = np.isfinite(borders[:-1]) & np.isfinite(borders[1:])
            lo, hi = _support_from_bars(borders, probs[q])
            grid = np.linspace(lo, hi, grid_size)
            idx = np.clip(np.searchsorted(borders, grid, side="right") - 1, 0, len(widths) - 1)
            density = np.where(finite[idx], density_bar[idx], 0.0)
            grids.append(grid)
            log_densities.append(_normalized_log_density(grid, density))
        return grids, log_densities

    def _quantile_density(self, queries, grid_size):
        """Fallback: rebuild densities from predicted quantiles."""
        levels = np.linspace(0.01, 0.99, 99)
        quants = self._regressor.predict(queries, output_type="quantiles", quantiles=levels.tolist())
        quants = np.asarray(quants, dtype=float)
        if quants.ndim == 1:
            quants = quants[None, :]
        if quants.shape[0] == len(levels):  # some versions return (levels, queries)
            quants = quants.T
        grids, log_densities = [], []
        for q in range(quants.shape[0]):
            grids_q, dens_q = _density_from_quantiles(levels, quants[q], grid_size)
            grids.append(grids_q)
            log_densities.append(_normalized_log_density(grids_q, dens_q))
        return grids, log_densities

    def fit_predict_proba(self, x, labels, queries):
        self._classifier.fit(x, labels)
        probs = np.asarray(self._classifier.predict_proba(queries), dtype=float)
        classes = np.asarray(self._classifier.classes_, dtype=float)
        return classes, probs


class FakeModels:
    """Deterministic stand-in used for protocol self-tests (no weights needed).

    Regression: global least squares with a Gaussian residual predictive.
    Classification: logistic regression fit by a few Newton steps.
    """

    def __init__(self, device: str = "cpu"):
        del device

    def fit_predict_density(self, x, y, queries, grid_size):
        design = np.column_stack([np.ones(len(x)), x])
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ beta
        sigma = max(float(resid.std()), 1e-6 * max(1.0, float(np.abs(y).max())))
        mean = np.column_stack([np.ones(len(queries)), queries]) @ beta
        grids, log_densities = [], []
        for m in mean:
            grid = np.linspace(m - 6 * sigma, m + 6 * sigma, grid_size)
            density = np.exp(-0.5 * ((grid - m) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
            grids.append(grid)
            log_densities.append(_normalized_log_density(grid, density))
        return grids, log_densities

    def fit_predict_proba(self, x, labels, queries):
        classes = np.unique(labels)
        design = np.column_stack([np.ones(len(x)), x])
        y = (labels == classes[-1]).astype(float)
        beta = np.zeros(design.shape[1])
        for _ in range(25):
            p = 1.0 / (1.0 + np.exp(-np.clip(design @ beta, -30, 30)))
            grad = design.T @ (y - p) - 1e-3 * beta
            hess = (design * (p * (1 - p))[:, None]).T @ design + 1e-3 * np.eye(len(beta))
            beta = beta + np.linalg.solve(hess, grad)
        pq = 1.0 / (1.0 + np.exp(-np.clip(np.column_stack([np.ones(len(queries)), queries]) @ beta, -30, 30)))
        pq = np.clip(pq, 1e-9, 1 - 1e-9)
        if classes.size == 2:
            probs = np.column_stack([1 - pq, pq])
        else:
            probs = np.tile(1.0 / classes.size, (len(queries), classes.size))
        return classes.astype(float), probs


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _support_from_bars(borders, probs, mass=1e-4):
    """Central interval of the bar distribution carrying 1 - 2*mass probability."""
    cdf = np.concatenate([[0.0], np.cumsum(probs)])
    finite_borders = np.where(np.isfinite(borders), borders, np.nan)
    lo = np.interp(mass, cdf, np.nan_to_num(borders, neginf=np.nanmin(finite_borders)))
    hi = np.interp(1 - mass, cdf, np.nan_to_num(borders, posinf=np.nanmax(finite_borders)))
    if not hi > lo:
        hi = lo + 1.0
    return float(lo), float(hi)


def _density_from_quantiles(levels, quants, grid_size):
    quants = np.maximum.accumulate(quants)  # enforce monotone quantiles
    span = quants[-1] - quants[0]
    pad = 0.05 * (span if span > 0 else 1.0)
    grid = np.linspace(quants[0] - pad, quants[-1] + pad, grid_size)
    mids = 0.5 * (quants[1:] + quants[:-1])
    slopes = np.diff(levels) / np.maximum(np.diff(quants), 1e-12)
    density = np.interp(grid, mids, slopes, left=slopes[0] * 1e-3, right=slopes[-1] * 1e-3)
    return grid, np.maximum(density, 0.0)


def _normalized_log_density(grid, density):
    total = np.trapezoid(density, grid)
    if not np.isfinite(total) or total <= 0:
        density = np.full_like(grid, 1.0 / (grid[-1] - grid[0]))
        total = 1.0
    density = np.maximum(density / total, 1e-300)
    return np.log(density)


# ---------------------------------------------------------------------------
# Request handling
# ---------------------------------------------------------------------------


class _RequestError(ValueError):
    pass


def _matrix(payload, key, width=None):
    try:
        arr = np.asarray(payload[key], dtype=float)
    except (KeyError, ValueError, TypeError) as exc:
        raise _RequestError(f"bad field {key!r}: {exc}") from None
    arr = np.atleast_2d(arr)
    if width is not None and arr.shape[1] != width:
        raise _RequestError(
            f"width mismatch: {key!r} has {arr.shape[1]} columns, context has {width}"
        )
    if not np.all(np.isfinite(arr)):
        raise _RequestError(f"non-finite values in {key!r}")
    return arr


class BridgeServer:
    """One protocol session bound to a lazily constructed model bundle."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self._models = None

    def _model_bundle(self):
        if self._models is None:
            if self.config.model == "fake":
                self._models = FakeModels(self.config.device)
            else:
                try:
                    self._models = TabPfnModels(self.config.device)
                except Exception as exc:
                    raise _RequestError(f"model load failed: {exc}") from exc
        return self._models

    def handle(self, request: dict) -> tuple[dict, bool]:
        rid = request.get("id")
        op = request.get("op")
        payload = request.get("payload") or {}
        try:
            if op == "handshake":
                if payload.get("version") != PROTOCOL_VERSION:
                    return _err(rid, f"unsupported protocol version {payload.get('version')!r}"), True
                return (
                    _ok(rid, {
                        "version": PROTOCOL_VERSION,
                        "capabilities": {"max_context": MAX_CONTEXT, "max_features": MAX_FEATURES},
                    }),
                    True,
                )
            if op == "regress":
                return self._regress(rid, payload), True
            if op == "classify":
                return self._classify(rid, payload), True
            if op == "shutdown":
                return _ok(rid, {}), False
            return _err(rid, f"unknown op {op!r}"), True
        except _RequestError as exc:
            return _err(rid, str(exc)), True
        except Exception as exc:  # keep serving on model-side failures
            return _err(rid, f"{type(exc).__name__}: {exc}"), True

    def _regress(self, rid, payload):
        features = _matrix(payload, "features")
        targets = _matrix(payload, "targets").reshape(-1)
        queries = _matrix(payload, "queries", width=features.shape[1])
        if targets.shape[0] != features.shape[0]:
            raise _RequestError("targets length does not match context rows")
        grid_size = int(payload.get("grid_size") or self.config.grid_size)
        if grid_size < MIN_GRID:
            raise _RequestError(f"grid_size must be >= {MIN_GRID}")
        seed = payload.get("seed")
        if seed is not None:
            np.random.seed(int(seed) % (2**32))  # some model versions draw internally
        grids, log_densities = self._model_bundle().fit_predict_density(
            features, targets, queries, grid_size
        )
        return _ok(rid, {
            "predictives": [
                {"grid": g.tolist(), "log_density": ld.tolist()}
                for g, ld in zip(grids, log_densities)
            ]
        })

    def _classify(self, rid, payload):
        features = _matrix(payload, "features")
        labels = _matrix(payload, "labels").reshape(-1)
        queries = _matrix(payload, "queries", width=features.shape[1])
        if np.unique(labels).size < 2:
            raise _RequestError("classification context must contain at least two classes")
        classes, probs = self._model_bundle().fit_predict_proba(features, labels, queries)
        return _ok(rid, {"classes": classes.tolist(), "probabilities": probs.tolist()})


def _ok(rid, payload):
    return {"id": rid, "status": "ok", "payload": payload, "error": None}


def _err(rid, message):
    return {"id": rid, "status": "error", "payload": None, "error": str(message)}


def serve(server: BridgeServer, reader, writer) -> None:
    for line in reader:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except ValueError as exc:
            writer.write(json.dumps(_err(None, f"bad JSON: {exc}")) + "\n")
            writer.flush()
            continue
        response, keep_going = server.handle(request)
        writer.write(json.dumps(response, allow_nan=False) + "\n")
        writer.flush()
        if not keep_going:
            return


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tcp", metavar="HOST:PORT", help="listen on TCP instead of stdio")
    parser.add_argument("--grid-size", type=int, default=DEFAULT_GRID)
    parser.add_argument(
        "--model", choices=["tabpfn", "fake"], default="tabpfn",
        help="'fake' serves a deterministic self-test model (no weights needed)",
    )
    args = parser.parse_args(argv)
    config = ServerConfig(
        device=os.environ.get("TABPFN_BRIDGE_DEVICE", "cpu"),
        grid_size=args.grid_size,
        model=args.model,
    )
    server = BridgeServer(config)
    if args.tcp:
        host, port = args.tcp.rsplit(":", 1)
        with socket.create_server((host, int(port))) as listener:
            conn, _ = listener.accept()
            with conn, conn.makefile("r") as reader, conn.makefile("w") as writer:
                serve(server, reader, writer)
        return 0
    serve(server, sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
