"""Request/response loop over TCP or stdio.

Each connection must open with a hello frame; the reply carries the
session's latent grid and capabilities. Protocol and model errors are
answered with typed error frames and never tear down the connection; only
EOF or a transport failure ends it. One request is handled at a time per
connection, and a shared lock serializes model access across connections.
"""

from __future__ import annotations

import socket
import sys
import threading

from .protocol import (
    PROTOCOL_VERSION,
    ProtocolError,
    capabilities_frame,
    decode_frame,
    encode_frame,
    error_frame,
    parse_forward,
    result_frame,
)


class _Connection:
    def __init__(self, reader, writer, session, lock):
        self.reader = reader
        self.writer = writer
        self.session = session
        self.lock = lock

    def send(self, frame: dict) -> None:
        self.writer.write(encode_frame(frame))
        self.writer.flush()

    def serve(self) -> None:
        try:
            if not self._handshake():
                return
            while True:
                line = self.reader.readline()
                if not line:
                    return
                try:
                    frame = decode_frame(line)
                except ProtocolError as exc:
                    self.send(error_frame(str(exc)))
                    continue
                self._handle(frame)
        except (OSError, ValueError):
            return

    def _handshake(self) -> bool:
        line = self.reader.readline()
        if not line:
            return False
        try:
            frame = decode_frame(line)
        except ProtocolError as exc:
            self.send(error_frame(str(exc)))
            return False
        if frame.get("type") != "hello":
            self.send(error_frame("expected a hello frame"))
            return False
        if frame.get("version") != PROTOCOL_VERSION:
            self.send(error_frame(f"unsupported protocol version {frame.get('version')!r}"))
            return False
        self.send(capabilities_frame(self.session.latent, self.session.capabilities))
        return True

    def _handle(self, frame: dict) -> None:
        if frame.get("type") != "forward":
            self.send(error_frame(f"unsupported frame type {frame.get('type')!r}"))
            return
        try:
            image, tokens, mask, mask_mode = parse_forward(frame)
            with self.lock:
                attention, gradients, itm, latent, image_size = self.session.forward(
                    image, tokens, mask, mask_mode
                )
        except ProtocolError as exc:
            self.send(error_frame(str(exc)))
            return
        except Exception as exc:  # model errors answered, never fatal
            self.send(error_frame(f"{type(exc).__name__}: {exc}"))
            return
        self.send(result_frame(attention, gradients, itm, latent, image_size))


def serve_stdio(session) -> None:
    lock = threading.Lock()
    _Connection(sys.stdin.buffer, sys.stdout.buffer, session, lock).serve()


def serve_tcp(session, host: str, port: int, ready_callback=None) -> None:
    """Listen forever; a thread per connection, model access serialized."""
    lock = threading.Lock()
    with socket.create_server((host, port)) as listener:
        bound = listener.getsockname()
        print(f"listening on {bound[0]}:{bound[1]}", file=sys.stderr, flush=True)
        if ready_callback is not None:
            ready_callback(bound)
        while True:
            conn, _ = listener.accept()
            thread = threading.Thread(
                target=_serve_socket, args=(conn, session, lock), daemon=True
            )
            thread.start()


def _serve_socket(conn, session, lock) -> None:
    with conn:
        reader = conn.makefile("rb")
        writer = conn.makefile("wb")
        _Connection(reader, writer, session, lock).serve()
