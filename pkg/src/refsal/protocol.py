"""Newline-delimited JSON frame protocol between the engine and a model server.

Each frame is one JSON object on one line. The client opens with
{"type": "hello", "version": 1} and the server answers with its latent grid
and capability list. Forward requests carry the token list, a bit-packed
attention mask, and the mask mode; results carry base64 little-endian
float32 tensors. Mask bits are packed row-major, most significant bit
first within each byte.
"""

from __future__ import annotations

import base64
import binascii
import json
import socket
import sys
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvariantViolationError,
    MalformedFrameError,
    TransportError,
)
from .backend import BackendRequest, BackendResponse

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 120.0
ROW_SUM_SLACK = 1e-4


def pack_mask(mask: np.ndarray) -> dict:
    arr = np.asarray(mask, dtype=np.uint8)
    bits = np.packbits(arr.reshape(-1), bitorder="big")
    return {
        "h": int(arr.shape[0]),
        "w": int(arr.shape[1]),
        "bits": base64.b64encode(bits.tobytes()).decode("ascii"),
    }


def unpack_mask(obj: dict) -> np.ndarray:
    try:
        h, w = int(obj["h"]), int(obj["w"])
        raw = base64.b64decode(obj["bits"], validate=True)
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        raise MalformedFrameError(f"bad mask object: {exc}") from exc
    expected = (h * w + 7) // 8
    if len(raw) != expected:
        raise MalformedFrameError(f"mask payload holds {len(raw)} bytes, expected {expected}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="big")[: h * w]
    return bits.reshape(h, w).astype(np.uint8)


def pack_tensor(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": [int(s) for s in data.shape],
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def unpack_tensor(obj: dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        raise MalformedFrameError(f"bad tensor object: {exc}") from exc
    count = int(np.prod(shape)) if shape else 0
    if len(raw) != 4 * count:
        raise MalformedFrameError(f"tensor payload holds {len(raw)} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def encode_frame(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n"


def decode_frame(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrameError(f"undecodable frame: {exc}") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise MalformedFrameError("frame is not an object with a 'type' field")
    return obj


def forward_frame(request: BackendRequest) -> dict:
    return {
        "type": "forward",
        "image": request.image_ref,
        "tokens": list(request.tokens),
        "mask": pack_mask(request.attention_mask),
        "mask_mode": request.mask_mode,
    }


def response_from_frame(frame: dict, request: BackendRequest) -> BackendResponse:
    """Decode a result frame and enforce the response contract."""
    if frame.get("type") == "error":
        raise TransportError(f"server error: {frame.get('message', 'unspecified')}")
    if frame.get("type") != "result":
        raise MalformedFrameError(f"unexpected frame type {frame.get('type')!r}")
    try:
        latent = (int(frame["latent"][0]), int(frame["latent"][1]))
        image_size = (int(frame["image_size"][0]), int(frame["image_size"][1]))
        itm = float(frame["itm"])
        attention = unpack_tensor(frame["attention"])
        gradients = unpack_tensor(frame["gradients"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise MalformedFrameError(f"incomplete result frame: {exc}") from exc
    _validate_response(attention, gradients, itm, latent, request)
    return BackendResponse(
        attention=attention.astype(np.float64),
        gradients_raw=gradients.astype(np.float64),
        itm=itm,
        latent=latent,
        image_size=image_size,
    )


def _validate_response(attention, gradients, itm, latent, request: BackendRequest) -> None:
    expected = (len(request.tokens),) + latent
    if attention.shape != expected or gradients.shape != expected:
        raise InvariantViolationError(
            f"tensor shapes {attention.shape}/{gradients.shape} do not match {expected}"
        )
    if request.attention_mask.shape != latent:
        raise InvariantViolationError(
            f"mask shape {request.attention_mask.shape} does not match latent {latent}"
        )
    if not np.all(np.isfinite(attention)) or not np.all(np.isfinite(gradients)):
        raise InvariantViolationError("response tensors contain non-finite values")
    if np.any(attention < 0):
        raise InvariantViolationError("negative attention values in response")
    if not np.isfinite(itm) or not 0.0 <= itm <= 1.0:
        raise InvariantViolationError(f"itm {itm} outside [0, 1]")
    sums = attention.reshape(attention.shape[0], -1).sum(axis=1)
    if np.any(sums > 1.0 + ROW_SUM_SLACK):
        raise InvariantViolationError(f"attention row sums exceed 1: max {sums.max()}")
    if request.mask_mode == "feature":
        masked = request.attention_mask == 0
        if masked.any() and (np.any(attention[:, masked] != 0) or np.any(gradients[:, masked] != 0)):
            raise InvariantViolationError("masked cells carry non-zero attention or gradient")


class FrameStream:
    """Line-framed JSON over a pair of binary file objects."""

    def __init__(self, reader, writer):
        self._reader = reader
        self._writer = writer

    def send(self, obj: dict) -> None:
        try:
            self._writer.write(encode_frame(obj))
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"failed to send frame: {exc}") from exc

    def receive(self) -> dict:
        try:
            line = self._reader.readline()
        except socket.timeout as exc:
            raise TransportError("timed out waiting for a frame") from exc
        except OSError as exc:
            raise TransportError(f"failed to read frame: {exc}") from exc
        if not line:
            raise TransportError("connection closed by peer")
        if not line.endswith(b"\n"):
            raise MalformedFrameError("truncated frame (no trailing newline)")
        return decode_frame(line)


class BridgeClient:
    """One-request-at-a-time client speaking the bridge protocol.

    Callers needing parallelism open one client per worker; a single
    connection never has more than one request in flight.
    """

    def __init__(self, stream: FrameStream, close=None):
        self._stream = stream
        self._close = close
        self._latent: tuple[int, int] | None = None
        self.capabilities: tuple[str, ...] = ()
        self._handshake()

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> "BridgeClient":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        sock.settimeout(timeout)
        reader = sock.makefile("rb")
        writer = sock.makefile("wb")

        def close():
            reader.close()
            writer.close()
            sock.close()

        return cls(FrameStream(reader, writer), close=close)

    @classmethod
    def over_stdio(cls) -> "BridgeClient":
        return cls(FrameStream(sys.stdin.buffer, sys.stdout.buffer))

    def _handshake(self) -> None:
        self._stream.send({"type": "hello", "version": PROTOCOL_VERSION})
        reply = self._stream.receive()
        if reply.get("type") == "error":
            raise TransportError(f"handshake rejected: {reply.get('message')}")
        try:
            self._latent = (int(reply["latent"][0]), int(reply["latent"][1]))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MalformedFrameError(f"handshake reply lacks a latent grid: {exc}") from exc
        self.capabilities = tuple(reply.get("capabilities", ()))

    def latent_grid(self, image_ref: str) -> tuple[int, int]:
        assert self._latent is not None
        return self._latent

    def forward(self, request: BackendRequest) -> BackendResponse:
        self._stream.send(forward_frame(request))
        return response_from_frame(self._stream.receive(), request)

    def close(self) -> None:
        if self._close is not None:
            self._close()


def bridge_forward(client: BridgeClient, request: BackendRequest) -> BackendResponse:
    """Single forward exchange over an established bridge connection."""
    return client.forward(request)
