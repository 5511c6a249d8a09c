"""Wire format helpers for the bridge protocol (server side).

One JSON object per newline-delimited frame. Masks travel as base64
bit-packed rows (most significant bit first); tensors as base64
little-endian float32. The client opens with a hello frame and the server
replies with its latent grid and capabilities.
"""

from __future__ import annotations

import base64
import binascii
import json

import numpy as np

PROTOCOL_VERSION = 1


class ProtocolError(Exception):
    """Client-visible problem with a frame; answered, never fatal."""


def encode_frame(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n"


def decode_frame(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable frame: {exc}") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("frame is not an object with a 'type' field")
    return obj


def unpack_mask(obj) -> np.ndarray:
    try:
        h, w = int(obj["h"]), int(obj["w"])
        raw = base64.b64decode(obj["bits"], validate=True)
    except (KeyError, TypeError, ValueError, binascii.Error) as exc:
        raise ProtocolError(f"bad mask object: {exc}") from exc
    expected = (h * w + 7) // 8
    if len(raw) != expected:
        raise ProtocolError(f"mask payload holds {len(raw)} bytes, expected {expected}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="big")[: h * w]
    return bits.reshape(h, w).astype(np.uint8)


def pack_tensor(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f4")
    return {
        "shape": [int(s) for s in data.shape],
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def error_frame(message: str) -> dict:
    return {"type": "error", "message": message}


def result_frame(attention, gradients, itm, latent, image_size) -> dict:
    return {
        "type": "result",
        "latent": [int(latent[0]), int(latent[1])],
        "image_size": [int(image_size[0]), int(image_size[1])],
        "itm": float(itm),
        "attention": pack_tensor(attention),
        "gradients": pack_tensor(gradients),
    }


def capabilities_frame(latent, capabilities) -> dict:
    return {
        "type": "capabilities",
        "version": PROTOCOL_VERSION,
        "latent": [int(latent[0]), int(latent[1])],
        "capabilities": list(capabilities),
        "head_reduction": "mean",
    }


def parse_forward(frame: dict):
    try:
        image = str(frame["image"])
        tokens = [str(t) for t in frame["tokens"]]
        mask = unpack_mask(frame["mask"])
        mask_mode = str(frame["mask_mode"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"incomplete forward frame: {exc}") from exc
    if mask_mode not in ("feature", "image"):
        raise ProtocolError(f"unknown mask_mode {mask_mode!r}")
    if not tokens:
        raise ProtocolError("forward frame carries no tokens")
    return image, tokens, mask, mask_mode
