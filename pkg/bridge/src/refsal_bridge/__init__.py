"""Bridge-protocol model server: echo replay and torch cross-attention hooking."""

from .echo import EchoSession
from .server import serve_stdio, serve_tcp

__version__ = "0.1.0"

__all__ = ["EchoSession", "serve_stdio", "serve_tcp"]
