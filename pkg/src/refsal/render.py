"""Deterministic raster output: overlays and 16-bit trace heatmaps."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import InputError
from .heatmap import as_binary_mask, as_heatmap2

OVERLAY_ALPHA = 0.6
BLANK_GRAY = 128


def _contour(mask: np.ndarray) -> np.ndarray:
    """Foreground cells with at least one 4-neighbor outside the mask."""
    m = mask.astype(bool)
    padded = np.pad(m, 1, mode="constant")
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def render_overlay(base_path, heat: np.ndarray, mask: np.ndarray, out_path) -> None:
    """Blend the heatmap into the red channel and trace the mask in green.

    `base_path` may be None, in which case a mid-gray canvas of the heatmap's
    size is used. Output is PNG, byte-stable for fixed inputs.
    """
    h = as_heatmap2(heat)
    if h.min() < 0.0 or h.max() > 1.0:
        raise InputError("overlay heat must lie in [0, 1]")
    m = as_binary_mask(mask)
    if m.shape != h.shape:
        raise InputError(f"mask shape {m.shape} does not match heat {h.shape}")
    height, width = h.shape
    if base_path is None:
        base = np.full((height, width, 3), BLANK_GRAY, dtype=np.float64)
    else:
        with Image.open(base_path) as img:
            base = np.asarray(img.convert("RGB"), dtype=np.float64)
        if base.shape[:2] != (height, width):
            raise InputError(
                f"base image is {base.shape[1]}x{base.shape[0]}, heat is {width}x{height}"
            )
    alpha = (OVERLAY_ALPHA * h)[:, :, None]
    red = np.zeros_like(base)
    red[:, :, 0] = 255.0
    out = base * (1.0 - alpha) + red * alpha
    contour = _contour(m)
    out[contour] = (0.0, 255.0, 0.0)
    img = Image.fromarray(np.clip(np.rint(out), 0, 255).astype(np.uint8), mode="RGB")
    img.save(out_path, format="PNG")


def save_heatmap_png16(heat: np.ndarray, out_path) -> None:
    """Quantize a [0, 1] map to 16-bit grayscale PNG (platform-stable bytes)."""
    h = as_heatmap2(heat)
    lo, hi = h.min(), h.max()
    if lo < 0.0 or hi > 1.0:
        span = hi - lo
        h = (h - lo) / span if span > 0 else np.zeros_like(h)
    arr = np.rint(h * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(out_path, format="PNG")
