"""Proposal filtering, heatmap-weighted scoring, and winner selection.

Candidates must cover a heatmap peak and stay below the fragmentation limit;
survivors are ranked by mean heatmap intensity under the mask (expressed as
the literal sum-plus-product score normalized by mask area, which lands in
[1, 2]). When nothing survives, constraints are relaxed in a recorded order
rather than returning nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError, NoCandidateError, ShapeError
from .heatmap import as_binary_mask

FILTER_EMPTY = "empty"
FILTER_NO_PEAK = "no-peak-coverage"
FILTER_FRAGMENTED = "too-fragmented"

RELAX_NONE = "none"
RELAX_NO_KAPPA = "no-kappa"
RELAX_ALL_NONEMPTY = "all-nonempty"

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)
_STRUCTURE_8 = np.ones((3, 3), dtype=np.uint8)


@dataclass(frozen=True)
class MaskProposal:
    id: int
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mask", as_binary_mask(self.mask))


@dataclass
class SelectionResult:
    selected_id: int | None
    candidates: tuple[int, ...]
    scores: dict[int, float]
    filtered_out: dict[int, str]
    relaxation: str = RELAX_NONE


def connected_components(mask: np.ndarray, connectivity: int = 4) -> int:
    """Number of foreground components; diagonal cells do not touch at 4."""
    arr = as_binary_mask(mask)
    if connectivity == 4:
        structure = _STRUCTURE_4
    elif connectivity == 8:
        structure = _STRUCTURE_8
    else:
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")
    _, count = ndimage.label(arr, structure=structure)
    return int(count)


def covers_peak(mask: np.ndarray, peaks: set[tuple[int, int]]) -> bool:
    arr = as_binary_mask(mask)
    h, w = arr.shape
    for x, y in peaks:
        if 0 <= y < h and 0 <= x < w and arr[y, x]:
            return True
    return False


def filter_proposals(
    proposals: list[MaskProposal],
    peaks: set[tuple[int, int]],
    kappa: int,
    connectivity: int = 4,
) -> tuple[list[MaskProposal], dict[int, str]]:
    """Split proposals into candidates and rejects with a reason per reject."""
    if not peaks:
        raise InputError("peak set is empty")
    if kappa < 1:
        raise ConfigError(f"kappa must be >= 1, got {kappa}")
    candidates: list[MaskProposal] = []
    rejected: dict[int, str] = {}
    for prop in proposals:
        if not prop.mask.any():
            rejected[prop.id] = FILTER_EMPTY
        elif not covers_peak(prop.mask, peaks):
            rejected[prop.id] = FILTER_NO_PEAK
        elif connected_components(prop.mask, connectivity) > kappa:
            rejected[prop.id] = FILTER_FRAGMENTED
        else:
            candidates.append(prop)
    return candidates, rejected


def score_proposals(candidates: list[MaskProposal], heat: np.ndarray) -> dict[int, float]:
    """Normalized mask score: (sum of B + B*heat) / sum of B, in [1, 2]."""
    heat = np.asarray(heat, dtype=np.float64)
    if heat.min() < 0.0 or heat.max() > 1.0:
        raise InputError("heatmap values must lie in [0, 1]")
    scores: dict[int, float] = {}
    for prop in candidates:
        if prop.mask.shape != heat.shape:
            raise ShapeError(f"mask shape {prop.mask.shape} does not match heat {heat.shape}")
        area = float(prop.mask.sum())
        if area == 0:
            raise InputError(f"proposal {prop.id} is empty; filter before scoring")
        m = prop.mask.astype(np.float64)
        total = float(np.sum(m + m * heat))
        scores[prop.id] = total / area
    return scores


def select(candidate_ids, scores: dict[int, float]) -> int:
    """Highest score wins; exact ties go to the lowest id."""
    ids = sorted(candidate_ids)
    if not ids:
        raise NoCandidateError("no candidates to select from")
    return max(ids, key=lambda j: (scores[j], -j))


def select_mask(
    proposals: list[MaskProposal],
    peaks: set[tuple[int, int]],
    heat: np.ndarray,
    kappa: int = 12,
    connectivity: int = 4,
) -> SelectionResult:
    """Filter, score, and select, relaxing constraints when nothing passes.

    Relaxation order: drop the fragmentation limit, then drop peak coverage
    and score every non-empty mask. The applied relaxation is recorded.
    """
    candidates, rejected = filter_proposals(proposals, peaks, kappa, connectivity)
    relaxation = RELAX_NONE
    if not candidates:
        nonempty = [p for p in proposals if p.mask.any()]
        candidates = [p for p in nonempty if covers_peak(p.mask, peaks)]
        relaxation = RELAX_NO_KAPPA
        if not candidates:
            candidates = nonempty
            relaxation = RELAX_ALL_NONEMPTY
    if not candidates:
        raise NoCandidateError("every proposal mask is empty")
    scores = score_proposals(candidates, heat)
    winner = select([p.id for p in candidates], scores)
    return SelectionResult(
        selected_id=winner,
        candidates=tuple(sorted(p.id for p in candidates)),
        scores=scores,
        filtered_out=rejected,
        relaxation=relaxation,
    )


def decode_rle(obj: dict) -> np.ndarray:
    """Decode {"size": [Y, X], "counts": [...]} into a (Y, X) uint8 mask.

    Counts alternate zero-runs and one-runs over the row-major flat mask,
    starting with the zero-run (which may be 0).
    """
    try:
        y, x = int(obj["size"][0]), int(obj["size"][1])
        counts = [int(c) for c in obj["counts"]]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputError(f"malformed RLE object: {exc}") from exc
    if y < 1 or x < 1:
        raise InputError(f"invalid RLE size {(y, x)}")
    if any(c < 0 for c in counts):
        raise InputError("RLE counts must be non-negative")
    if sum(counts) != y * x:
        raise InputError(f"RLE counts sum to {sum(counts)}, expected {y * x}")
    flat = np.zeros(y * x, dtype=np.uint8)
    pos = 0
    value = 0
    for run in counts:
        if value:
            flat[pos : pos + run] = 1
        pos += run
        value ^= 1
    return flat.reshape(y, x)


def encode_rle(mask: np.ndarray) -> dict:
    """Inverse of decode_rle; always emits the leading zero-run."""
    arr = as_binary_mask(mask)
    flat = arr.reshape(-1)
    changes = np.nonzero(np.diff(flat))[0] + 1
    boundaries = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(boundaries).tolist()
    if flat[0] == 1:
        counts = [0] + counts
    return {"size": [int(arr.shape[0]), int(arr.shape[1])], "counts": [int(c) for c in counts]}


def load_proposals(path, expected_size: tuple[int, int] | None = None) -> list[MaskProposal]:
    """Read a proposal file: a JSON array of {"id": n, "rle": {...}} objects."""
    with open(path, encoding="utf-8") as fp:
        data = json.load(fp)
    if not isinstance(data, list):
        raise InputError(f"proposal file {path} does not hold a JSON array")
    proposals = []
    for entry in data:
        try:
            prop = MaskProposal(id=int(entry["id"]), mask=decode_rle(entry["rle"]))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed proposal entry in {path}: {exc}") from exc
        if expected_size is not None and prop.mask.shape != expected_size:
            raise ShapeError(
                f"proposal {prop.id} has shape {prop.mask.shape}, expected {expected_size}"
            )
        proposals.append(prop)
    return proposals
