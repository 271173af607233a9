"""In-context backends: abstract contract, reference implementation, wire bridge."""

from .base import (
    DEFAULT_GRID_SIZE,
    BackendCapabilities,
    BackendError,
    ContextSet,
    InContextBackend,
    PredictiveDistribution1D,
)
from .reference import ReferenceBackend

__all__ = [
    "DEFAULT_GRID_SIZE",
    "BackendCapabilities",
    "BackendError",
    "ContextSet",
    "InContextBackend",
    "PredictiveDistribution1D",
    "ReferenceBackend",
    "make_backend",
]


def make_backend(selector: str, **kwargs):
    """Resolve a backend selector string: ``reference`` or ``bridge:<command>``.

    ``bridge:`` accepts a shell-style command to spawn (stdio transport) or
    ``tcp:<host>:<port>`` to connect to a listening server.
    """
    if selector == "reference":
        return ReferenceBackend(**kwargs)
    if selector.startswith("bridge:"):
        from .bridge import BridgeBackend

        target = selector[len("bridge:"):]
        return BridgeBackend.open(target, **kwargs)
    raise ValueError(f"unknown backend selector {selector!r}")
