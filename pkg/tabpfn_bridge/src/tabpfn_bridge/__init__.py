"""Protocol-v1 server exposing TabPFN as an in-context density backend."""

from .server import BridgeServer, ServerConfig, main, serve

__all__ = ["BridgeServer", "ServerConfig", "main", "serve"]
__version__ = "0.1.0"
