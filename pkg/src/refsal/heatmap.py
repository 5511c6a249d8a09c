"""Dense map arithmetic on the latent grid and at image resolution.

Conventions: token stacks are float arrays of shape (tokens, h, w), 2-D maps
are (h, w), image-resolution maps are (Y, X) with Y rows of X pixels, and
coordinates are (x, y) = (column, row). Binary masks are uint8 grids of 0/1.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError, ShapeError

DUMP_MAGIC = b"IRPE"
DUMP_VERSION = 1


def as_tensor3(values) -> np.ndarray:
    """Validate and return a (tokens, h, w) float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected a 3-d token stack, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise InputError(f"token stack has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("token stack contains non-finite values")
    return arr


def as_heatmap2(values) -> np.ndarray:
    """Validate and return an (h, w) float64 map."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d map, got shape {arr.shape}")
    if arr.size == 0:
        raise InputError("map is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError("map contains non-finite values")
    return arr


def as_binary_mask(values) -> np.ndarray:
    """Validate and return an (h, w) uint8 mask of 0/1 cells."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d mask, got shape {arr.shape}")
    if arr.size == 0:
        raise InputError("mask is empty")
    if not np.isin(arr, (0, 1)).all():
        raise InputError("mask cells must be 0 or 1")
    return arr.astype(np.uint8)


def compose_gradcam(attention: np.ndarray, gradients_raw: np.ndarray) -> np.ndarray:
    """Per-token saliency: attention times the positive part of the gradient."""
    a = as_tensor3(attention)
    g = as_tensor3(gradients_raw)
    if a.shape != g.shape:
        raise ShapeError(f"attention {a.shape} and gradients {g.shape} differ")
    return a * np.maximum(g, 0.0)


def mean_over_tokens(stack: np.ndarray) -> np.ndarray:
    """Collapse a (tokens, h, w) stack to its per-cell token mean."""
    arr = as_tensor3(stack)
    return arr.mean(axis=0)


def center_sigmoid(heat: np.ndarray) -> np.ndarray:
    """Sigmoid of the mean-centered map; above-mean cells land above 0.5."""
    arr = as_heatmap2(heat)
    return expit(arr - arr.mean())


def threshold_drop_mask(heat: np.ndarray, theta: float) -> np.ndarray:
    """Binary mask that zeroes the most attentive region.

    Cells whose center_sigmoid value is >= theta become 0 (dropped), the
    rest become 1. Equality falls in the drop branch.
    """
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"drop threshold must lie in (0, 1), got {theta}")
    return (center_sigmoid(heat) < theta).astype(np.uint8)


def bilinear_upsample(heat: np.ndarray, width: int, height: int) -> np.ndarray:
    """Corner-aligned bilinear resample of an (h, w) map to (height, width).

    Output values are convex combinations of inputs, so min/max are bounded
    by the input range; resampling to the input size reproduces it exactly.
    """
    arr = as_heatmap2(heat)
    if width < 1 or height < 1:
        raise ConfigError(f"target size must be positive, got {width}x{height}")
    h, w = arr.shape
    xs = np.linspace(0.0, w - 1.0, num=width)
    ys = np.linspace(0.0, h - 1.0, num=height)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = arr[y0[:, None], x0[None, :]] * (1.0 - fx) + arr[y0[:, None], x1[None, :]] * fx
    bot = arr[y1[:, None], x0[None, :]] * (1.0 - fx) + arr[y1[:, None], x1[None, :]] * fx
    return top * (1.0 - fy)[:, None] + bot * fy[:, None]


def argmax_coords(heat: np.ndarray, tie_tol: float = 1e-9) -> set[tuple[int, int]]:
    """All (x, y) positions within tie_tol of the map maximum."""
    arr = as_heatmap2(heat)
    if tie_tol < 0:
        raise ConfigError(f"tie tolerance must be >= 0, got {tie_tol}")
    peak = arr.max()
    rows, cols = np.nonzero(arr >= peak - tie_tol)
    return {(int(x), int(y)) for y, x in zip(rows, cols)}


def write_tensor_dump(fp: BinaryIO, stack: np.ndarray) -> None:
    """Serialize a token stack: magic, version byte, u32 dims, f32 data (LE)."""
    arr = np.ascontiguousarray(np.asarray(stack), dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ShapeError(f"dump requires a 2-d or 3-d array, got shape {arr.shape}")
    tokens, h, w = arr.shape
    fp.write(DUMP_MAGIC)
    fp.write(bytes([DUMP_VERSION]))
    fp.write(struct.pack("<III", tokens, h, w))
    fp.write(arr.tobytes())


def read_tensor_dump(fp: BinaryIO) -> np.ndarray:
    """Read a tensor dump back as a float32 (tokens, h, w) array."""
    magic = fp.read(4)
    if magic != DUMP_MAGIC:
        raise InputError(f"bad dump magic {magic!r}")
    version = fp.read(1)
    if version != bytes([DUMP_VERSION]):
        raise InputError(f"unsupported dump version {version!r}")
    header = fp.read(12)
    if len(header) != 12:
        raise InputError("truncated dump header")
    tokens, h, w = struct.unpack("<III", header)
    if tokens < 1 or h < 1 or w < 1:
        raise InputError(f"invalid dump dimensions {(tokens, h, w)}")
    payload = fp.read(4 * tokens * h * w)
    if len(payload) != 4 * tokens * h * w:
        raise InputError("truncated dump payload")
    return np.frombuffer(payload, dtype="<f4").reshape(tokens, h, w).copy()


def save_tensor_dump(path, stack: np.ndarray) -> None:
    with open(path, "wb") as fp:
        write_tensor_dump(fp, stack)


def load_tensor_dump(path) -> np.ndarray:
    with open(path, "rb") as fp:
        return read_tensor_dump(fp)
