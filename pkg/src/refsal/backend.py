"""Cross-attention backend contract and the deterministic synthetic model.

The synthetic backend renders Gaussian blobs on a latent grid and answers
forward requests with normalized per-token attention, signed gradients, and
a matching score, so the refinement loop can be exercised without any
neural model. A per-blob bias that is active only for the all-ones mask
lets fixtures stage a distractor that wins the first iteration and loses
once its region is masked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ConfigError, InputError, ShapeError, UnknownImageError
from .heatmap import as_binary_mask

ATTENTION_FLOOR = 1e-4
MASK_MODES = ("feature", "image")


@dataclass(frozen=True)
class BackendRequest:
    tokens: tuple[str, ...]
    attention_mask: np.ndarray
    mask_mode: str
    image_ref: str

    def __post_init__(self):
        if not self.tokens:
            raise InputError("request carries no tokens")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        object.__setattr__(self, "attention_mask", as_binary_mask(self.attention_mask))
        object.__setattr__(self, "tokens", tuple(self.tokens))


@dataclass(frozen=True)
class BackendResponse:
    attention: np.ndarray
    gradients_raw: np.ndarray
    itm: float
    latent: tuple[int, int]
    image_size: tuple[int, int]


class Backend(Protocol):
    def latent_grid(self, image_ref: str) -> tuple[int, int]: ...

    def forward(self, request: BackendRequest) -> BackendResponse: ...


@dataclass(frozen=True)
class Blob:
    """Gaussian evidence source in latent coordinates (x, y)."""

    center: tuple[float, float]
    sigma: float
    salience: float
    tags: frozenset[str]
    bias: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.salience <= 1.0:
            raise ConfigError(f"blob salience must lie in (0, 1], got {self.salience}")
        if self.sigma <= 0:
            raise ConfigError(f"blob sigma must be positive, got {self.sigma}")
        if not self.tags:
            raise InputError("blob tags must be non-empty")
        if self.bias <= 0:
            raise ConfigError(f"blob bias must be positive, got {self.bias}")
        object.__setattr__(self, "tags", frozenset(self.tags))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass(frozen=True)
class SyntheticScene:
    image_size: tuple[int, int]
    latent: tuple[int, int]
    blobs: tuple[Blob, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.blobs:
            raise InputError("scene needs at least one blob")
        x, y = self.image_size
        h, w = self.latent
        if min(x, y, h, w) < 1:
            raise ConfigError(f"invalid scene dimensions image={self.image_size} latent={self.latent}")
        object.__setattr__(self, "blobs", tuple(self.blobs))
        object.__setattr__(self, "image_size", (int(x), int(y)))
        object.__setattr__(self, "latent", (int(h), int(w)))

    def to_dict(self) -> dict:
        return {
            "image_size": list(self.image_size),
            "latent": list(self.latent),
            "blobs": [
                {
                    "center": list(b.center),
                    "sigma": b.sigma,
                    "salience": b.salience,
                    "tags": sorted(b.tags),
                    "bias": b.bias,
                }
                for b in self.blobs
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticScene":
        try:
            blobs = tuple(
                Blob(
                    center=tuple(b["center"]),
                    sigma=float(b["sigma"]),
                    salience=float(b["salience"]),
                    tags=frozenset(b["tags"]),
                    bias=float(b.get("bias", 1.0)),
                )
                for b in data["blobs"]
            )
            return cls(
                image_size=tuple(data["image_size"]),
                latent=tuple(data["latent"]),
                blobs=blobs,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed scene object: {exc}") from exc


def _lemma_candidates(token: str) -> set[str]:
    word = token.lower()
    out = {word}
    if word.endswith("ies") and len(word) > 4:
        out.add(word[:-3] + "y")
    if word.endswith("es") and len(word) > 3:
        out.add(word[:-2])
    if word.endswith("s") and len(word) > 3 and not word.endswith("ss"):
        out.add(word[:-1])
    return out


def _blob_field(blob: Blob, latent: tuple[int, int]) -> np.ndarray:
    h, w = latent
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    cx, cy = blob.center
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    return np.exp(-d2 / (2.0 * blob.sigma**2))


def _blob_center_cell(blob: Blob, latent: tuple[int, int]) -> tuple[int, int]:
    h, w = latent
    cx, cy = blob.center
    return min(max(int(round(cy)), 0), h - 1), min(max(int(round(cx)), 0), w - 1)


def _blob_visibility(scene: SyntheticScene, mask: np.ndarray, mask_mode: str) -> list[np.ndarray]:
    """Per-blob evidence fields with masking applied.

    Feature mode zeroes masked cells; image mode removes a blob entirely
    when its center pixel is masked out, approximating pixel-level masking.
    """
    fields = []
    for blob in scene.blobs:
        g = _blob_field(blob, scene.latent)
        if mask_mode == "feature":
            fields.append(g * mask)
        else:
            row, col = _blob_center_cell(blob, scene.latent)
            fields.append(g if mask[row, col] else np.zeros_like(g))
    return fields


def _match_counts(scene: SyntheticScene, tokens: tuple[str, ...]) -> list[int]:
    lemma_sets = [_lemma_candidates(t) for t in tokens]
    counts = []
    for blob in scene.blobs:
        matched = {t for t, lemmas in zip(tokens, lemma_sets) if lemmas & blob.tags}
        counts.append(len(matched))
    return counts


def synthetic_forward(scene: SyntheticScene, request: BackendRequest) -> BackendResponse:
    """Deterministic closed-form forward pass over the scene's blobs."""
    h, w = scene.latent
    mask = request.attention_mask
    if mask.shape != (h, w):
        raise ShapeError(f"mask shape {mask.shape} does not match latent grid {(h, w)}")
    mask_f = mask.astype(np.float64)
    all_ones = bool(mask.all())
    masked_fields = _blob_visibility(scene, mask_f, request.mask_mode)

    n_tokens = len(request.tokens)
    attention = np.zeros((n_tokens, h, w), dtype=np.float64)
    gradients = np.zeros((n_tokens, h, w), dtype=np.float64)
    for k, token in enumerate(request.tokens):
        lemmas = _lemma_candidates(token)
        raw = np.zeros((h, w), dtype=np.float64)
        salience_max = 0.0
        matched = False
        for blob, visible in zip(scene.blobs, masked_fields):
            if lemmas & blob.tags:
                matched = True
                bias = blob.bias if all_ones else 1.0
                raw += blob.salience * bias * visible
                salience_max = max(salience_max, blob.salience)
        if not matched:
            raw = ATTENTION_FLOOR * (mask_f if request.mask_mode == "feature" else np.ones((h, w)))
        total = raw.sum()
        if total > 0:
            attention[k] = raw / total
        gradients[k] = attention[k] * (2.0 * salience_max - 1.0)

    itm = _match_score(scene, request, masked_fields, all_ones)
    return BackendResponse(
        attention=attention,
        gradients_raw=gradients,
        itm=itm,
        latent=scene.latent,
        image_size=scene.image_size,
    )


def _match_score(
    scene: SyntheticScene,
    request: BackendRequest,
    masked_fields: list[np.ndarray],
    all_ones: bool,
) -> float:
    """Soft image-text match: precision times recall of the referred evidence.

    The blobs matching the most request tokens are taken as the referred
    instances. Recall is their visible evidence over their total evidence;
    precision weighs it against the other blobs' visible evidence, with the
    per-blob bias counted while the mask is all ones. Masking everything
    drives the score to 0; a lone fully visible blob scores 1.
    """
    counts = _match_counts(scene, request.tokens)
    best = max(counts)
    if best < 1:
        return 0.0
    target_visible = 0.0
    target_total = 0.0
    clutter_visible = 0.0
    for blob, count, visible in zip(scene.blobs, counts, masked_fields):
        full = _blob_field(blob, scene.latent)
        if count == best:
            target_visible += blob.salience * float(visible.sum())
            target_total += blob.salience * float(full.sum())
        else:
            bias = blob.bias if all_ones else 1.0
            clutter_visible += blob.salience * bias * float(visible.sum())
    if target_total <= 0 or target_visible <= 0:
        return 0.0
    precision = target_visible / (target_visible + clutter_visible)
    recall = target_visible / target_total
    return float(np.clip(precision * recall, 0.0, 1.0))


class SyntheticBackend:
    """Backend over one or more named synthetic scenes."""

    def __init__(self, scenes: dict[str, SyntheticScene]):
        if not scenes:
            raise InputError("no scenes provided")
        self._scenes = dict(scenes)

    @classmethod
    def from_file(cls, path) -> "SyntheticBackend":
        with open(path, encoding="utf-8") as fp:
            data = json.load(fp)
        if "scenes" in data:
            scenes = {name: SyntheticScene.from_dict(obj) for name, obj in data["scenes"].items()}
        else:
            scenes = {"default": SyntheticScene.from_dict(data)}
        return cls(scenes)

    def scene(self, image_ref: str) -> SyntheticScene:
        try:
            return self._scenes[image_ref]
        except KeyError:
            raise UnknownImageError(f"no scene named {image_ref!r}") from None

    def latent_grid(self, image_ref: str) -> tuple[int, int]:
        return self.scene(image_ref).latent

    def forward(self, request: BackendRequest) -> BackendResponse:
        return synthetic_forward(self.scene(request.image_ref), request)
