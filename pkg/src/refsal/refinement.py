"""Iterative saliency refinement with the soft-match stopping rule.

Each iteration queries the backend under the cumulative drop mask, builds
an emphasized saliency map, and blends it into the running heatmap. The
loop stops early when the product of the backend match score and the
overlooked-area ratio falls below the previous iteration's, in which case
the freshly computed iteration is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import Backend, BackendRequest, MASK_MODES
from .emphasis import TokenSaliencyStack, augment
from .errors import BackendError, ConfigError, InputError, ShapeError, TransportError
from .heatmap import (
    as_binary_mask,
    as_heatmap2,
    bilinear_upsample,
    center_sigmoid,
    threshold_drop_mask,
)
from .parsing import ParsedExpression

PROMPT_PREFIX = ("there", "is", "a")


@dataclass(frozen=True)
class RefinementConfig:
    blend: float = 0.8
    drop_threshold: float = 0.5
    max_iterations: int = 3
    mask_mode: str = "feature"

    def __post_init__(self):
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError(f"blend factor must lie in [0, 1], got {self.blend}")
        if not 0.0 < self.drop_threshold < 1.0:
            raise ConfigError(f"drop threshold must lie in (0, 1), got {self.drop_threshold}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")


@dataclass
class IterationRecord:
    heatmap: np.ndarray
    drop_mask: np.ndarray
    itm: float
    relevance: float
    score: float


@dataclass
class RefinementState:
    committed: int
    refined: np.ndarray
    cum_mask: np.ndarray
    scores: list[float]
    trace: list[IterationRecord]
    latent: tuple[int, int]
    image_size: tuple[int, int]
    stopped_early: bool = False
    rejected_score: float | None = None
    backend_calls: int = 0

    def image_heatmap(self) -> np.ndarray:
        """Refined heatmap upsampled to image resolution."""
        x, y = self.image_size
        return bilinear_upsample(self.refined, x, y)


def update_heatmap(prev: np.ndarray, current: np.ndarray, blend: float) -> np.ndarray:
    """Convex blend of the running heatmap with the squashed current map."""
    p = as_heatmap2(prev)
    c = as_heatmap2(current)
    if p.shape != c.shape:
        raise ShapeError(f"heatmap shapes differ: {p.shape} vs {c.shape}")
    if not 0.0 <= blend <= 1.0:
        raise ConfigError(f"blend factor must lie in [0, 1], got {blend}")
    return blend * p + (1.0 - blend) * center_sigmoid(c)


def update_mask(prev: np.ndarray, current_heat: np.ndarray, threshold: float) -> np.ndarray:
    """AND the running mask with the drop mask of the current map; zeros only grow."""
    p = as_binary_mask(prev)
    drop = threshold_drop_mask(current_heat, threshold)
    if p.shape != drop.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {drop.shape}")
    return (p & drop).astype(np.uint8)


def relevance_score(refined_prev: np.ndarray) -> float:
    """Average overlooked intensity of an image-resolution heatmap in [0, 1]."""
    arr = as_heatmap2(refined_prev)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("relevance input must lie in [0, 1]")
    return float(1.0 - arr.mean())


def soft_itm(itm: float, relevance: float) -> float:
    if not 0.0 <= itm <= 1.0:
        raise InputError(f"itm {itm} outside [0, 1]")
    if not 0.0 <= relevance <= 1.0:
        raise InputError(f"relevance {relevance} outside [0, 1]")
    return itm * relevance


def request_tokens(parsed: ParsedExpression) -> tuple[str, ...]:
    """Token sequence sent to the backend: sentinel, prompt prefix, expression."""
    user = tuple(t.surface for t in parsed.tokens[1:])
    return (parsed.tokens[0].surface,) + PROMPT_PREFIX + user


def stack_from_response(response, parsed: ParsedExpression) -> TokenSaliencyStack:
    """Slice sentinel and expression rows out of a prompt-prefixed response."""
    n_user = len(parsed.tokens) - 1
    expected = 1 + len(PROMPT_PREFIX) + n_user
    if response.attention.shape[0] != expected:
        raise ShapeError(
            f"response has {response.attention.shape[0]} token rows, expected {expected}"
        )
    rows = [0] + [1 + len(PROMPT_PREFIX) + i for i in range(n_user)]
    return TokenSaliencyStack(
        attention=response.attention[rows],
        gradients_raw=response.gradients_raw[rows],
        token_map=tuple(range(len(rows))),
    )


class RefinementTransportError(TransportError):
    """Backend failure annotated with the iteration it occurred in."""

    def __init__(self, iteration: int, cause: BackendError):
        super().__init__(f"backend failure at iteration {iteration}: {cause}")
        self.iteration = iteration


def run_refinement(
    backend: Backend,
    parsed: ParsedExpression,
    image_ref: str,
    cfg: RefinementConfig | None = None,
) -> RefinementState:
    """Run the refine/mask/re-query loop and return the accepted state."""
    if cfg is None:
        cfg = RefinementConfig()
    h, w = backend.latent_grid(image_ref)
    refined = np.zeros((h, w), dtype=np.float64)
    cum_mask = np.ones((h, w), dtype=np.uint8)
    scores: list[float] = []
    trace: list[IterationRecord] = []
    tokens = request_tokens(parsed)
    image_size: tuple[int, int] | None = None
    stopped_early = False
    rejected: float | None = None
    calls = 0

    for t in range(1, cfg.max_iterations + 1):
        request = BackendRequest(
            tokens=tokens,
            attention_mask=cum_mask.copy(),
            mask_mode=cfg.mask_mode,
            image_ref=image_ref,
        )
        try:
            response = backend.forward(request)
        except BackendError as exc:
            raise RefinementTransportError(t, exc) from exc
        calls += 1
        if response.latent != (h, w):
            raise ShapeError(f"backend switched latent grid to {response.latent}")
        if image_size is None:
            image_size = response.image_size
        elif response.image_size != image_size:
            raise ShapeError(f"backend switched image size to {response.image_size}")

        stack = stack_from_response(response, parsed)
        current = augment(stack, parsed).combined
        x_size, y_size = image_size
        relevance = relevance_score(bilinear_upsample(refined, x_size, y_size))
        score = soft_itm(response.itm, relevance)
        if t >= 2 and score < scores[-1]:
            stopped_early = True
            rejected = score
            break
        refined = update_heatmap(refined, current, cfg.blend)
        cum_mask = update_mask(cum_mask, current, cfg.drop_threshold)
        scores.append(score)
        trace.append(
            IterationRecord(
                heatmap=current,
                drop_mask=threshold_drop_mask(current, cfg.drop_threshold),
                itm=response.itm,
                relevance=relevance,
                score=score,
            )
        )

    assert image_size is not None
    return RefinementState(
        committed=len(scores),
        refined=refined,
        cum_mask=cum_mask,
        scores=scores,
        trace=trace,
        latent=(h, w),
        image_size=image_size,
        stopped_early=stopped_early,
        rejected_score=rejected,
        backend_calls=calls,
    )
