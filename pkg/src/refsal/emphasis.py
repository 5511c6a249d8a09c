"""Primary-word emphasis: local contrast and global repetition augmentation.

Builds the per-iteration saliency map from a token stack by contrasting the
primary word's attention against each context token (unit-energy difference
maps) and by duplicating the primary word's saliency along the token axis
before averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateContextError, InputError, ShapeError
from .heatmap import as_tensor3
from .parsing import ParsedExpression

DIFF_NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class TokenSaliencyStack:
    """Per-token attention and raw gradients on the latent grid.

    `token_map[row]` gives the parsed-token index served by that row; every
    row must be covered and no parsed token may appear twice.
    """

    attention: np.ndarray
    gradients_raw: np.ndarray
    token_map: tuple[int, ...]

    def __post_init__(self):
        a = as_tensor3(self.attention)
        g = as_tensor3(self.gradients_raw)
        if a.shape != g.shape:
            raise ShapeError(f"attention {a.shape} and gradients {g.shape} differ")
        if np.any(a < 0):
            raise InputError("attention values must be non-negative")
        if len(self.token_map) != a.shape[0]:
            raise InputError(
                f"token_map covers {len(self.token_map)} rows, stack has {a.shape[0]}"
            )
        if len(set(self.token_map)) != len(self.token_map):
            raise InputError("token_map assigns one row per parsed token")
        object.__setattr__(self, "attention", a)
        object.__setattr__(self, "gradients_raw", g)

    def row_for(self, token_index: int) -> int:
        try:
            return self.token_map.index(token_index)
        except ValueError:
            raise InputError(f"no stack row for parsed token {token_index}") from None

    @property
    def grid(self) -> tuple[int, int]:
        return self.attention.shape[1], self.attention.shape[2]


@dataclass(frozen=True)
class AugmentedGradcam:
    local: np.ndarray
    global_: np.ndarray
    combined: np.ndarray


def _primary_maps(stack: TokenSaliencyStack, parsed: ParsedExpression):
    row = stack.row_for(parsed.primary)
    attn = stack.attention[row]
    grad_pos = np.maximum(stack.gradients_raw[row], 0.0)
    return attn, grad_pos, attn * grad_pos


def local_augment(
    stack: TokenSaliencyStack,
    parsed: ParsedExpression,
    eps: float = DIFF_NORM_FLOOR,
) -> np.ndarray:
    """One contrast slot per context token: D_c * G+ * H_m.

    D_c is the primary-minus-context attention difference scaled to unit
    global L2 norm (eps guards an all-zero difference).
    """
    if not parsed.context:
        raise DegenerateContextError("no context tokens; skip the local branch")
    attn_m, grad_pos, h_m = _primary_maps(stack, parsed)
    slots = np.empty((len(parsed.context),) + attn_m.shape, dtype=np.float64)
    for slot, ctx_index in enumerate(parsed.context):
        diff = attn_m - stack.attention[stack.row_for(ctx_index)]
        norm = np.sqrt(np.sum(diff * diff))
        direction = diff / max(norm, eps)
        slots[slot] = direction * grad_pos * h_m
    return slots


def global_augment(stack: TokenSaliencyStack, parsed: ParsedExpression) -> np.ndarray:
    """Per-token saliency over the effective set with the primary word repeated.

    Rows follow sorted effective-token order, then one extra primary-word row
    per context token, so the row count is |W| + N_c.
    """
    if not parsed.effective:
        raise InputError("effective token set is empty")
    order = sorted(parsed.effective)
    repeats = len(parsed.context)
    h, w = stack.grid
    rows = np.empty((len(order) + repeats,) + (h, w), dtype=np.float64)
    for k, token_index in enumerate(order):
        row = stack.row_for(token_index)
        rows[k] = stack.attention[row] * np.maximum(stack.gradients_raw[row], 0.0)
    _, _, h_m = _primary_maps(stack, parsed)
    for k in range(repeats):
        rows[len(order) + k] = h_m
    return rows


def aggregate(local: np.ndarray, global_: np.ndarray) -> np.ndarray:
    """Mean over the token axis of the concatenated [global, local] rows."""
    parts = []
    for arr in (global_, local):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.size:
            parts.append(arr)
    if not parts:
        raise InputError("nothing to aggregate: both row sets are empty")
    stacked = np.concatenate(parts, axis=0)
    if stacked.ndim != 3:
        raise ShapeError(f"expected (rows, h, w) inputs, got shape {stacked.shape}")
    return stacked.mean(axis=0)


def augment(
    stack: TokenSaliencyStack,
    parsed: ParsedExpression,
    eps: float = DIFF_NORM_FLOOR,
) -> AugmentedGradcam:
    """Full emphasis pipeline; with no context tokens only the global branch runs."""
    global_rows = global_augment(stack, parsed)
    h, w = stack.grid
    if parsed.context:
        local_rows = local_augment(stack, parsed, eps)
    else:
        local_rows = np.empty((0, h, w), dtype=np.float64)
    return AugmentedGradcam(
        local=local_rows,
        global_=global_rows,
        combined=aggregate(local_rows, global_rows),
    )
