"""Bundled synthetic scenes, datasets, and tensor dumps for tests and demos.

The two-blob scene stages a distractor that dominates the first pass (its
bias is active only under the all-ones mask) and loses once its region is
dropped, so a multi-iteration run flips to the referred blob while a
single-iteration run stays wrong.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backend import BackendRequest, Blob, SyntheticScene, synthetic_forward
from .heatmap import save_tensor_dump
from .parsing import parse
from .refinement import request_tokens
from .selection import encode_rle

LATENT = (12, 16)
IMAGE_SIZE = (128, 96)

SELFCORRECT_EXPRESSION = "the right dog"
SINGLEBLOB_EXPRESSION = "a cat"

_LEFT_CENTER = (4.0, 5.5)
_RIGHT_CENTER = (11.0, 5.5)
_BLOB_SIGMA = 2.4
_DISTRACTOR_BIAS = 1.5


def selfcorrect_scene() -> SyntheticScene:
    """Two dogs; the left one is boosted only while nothing is masked."""
    return SyntheticScene(
        image_size=IMAGE_SIZE,
        latent=LATENT,
        blobs=(
            Blob(center=_LEFT_CENTER, sigma=_BLOB_SIGMA, salience=0.9,
                 tags=frozenset({"dog", "left"}), bias=_DISTRACTOR_BIAS),
            Blob(center=_RIGHT_CENTER, sigma=_BLOB_SIGMA, salience=0.48,
                 tags=frozenset({"dog", "right"})),
        ),
    )


def singleblob_scene() -> SyntheticScene:
    return SyntheticScene(
        image_size=IMAGE_SIZE,
        latent=LATENT,
        blobs=(
            Blob(center=(8.0, 5.5), sigma=2.2, salience=0.9, tags=frozenset({"cat"})),
        ),
    )


def latent_to_image(cx: float, cy: float) -> tuple[float, float]:
    """Map latent coordinates to image pixels under corner-aligned upsampling."""
    h, w = LATENT
    x_size, y_size = IMAGE_SIZE
    px = cx * (x_size - 1) / (w - 1) if w > 1 else 0.0
    py = cy * (y_size - 1) / (h - 1) if h > 1 else 0.0
    return px, py


def disc_mask(center_px: tuple[float, float], radius: float,
              size: tuple[int, int] = IMAGE_SIZE) -> np.ndarray:
    x_size, y_size = size
    ys = np.arange(y_size)[:, None]
    xs = np.arange(x_size)[None, :]
    cx, cy = center_px
    return (((xs - cx) ** 2 + (ys - cy) ** 2) <= radius**2).astype(np.uint8)


def selfcorrect_masks() -> dict[str, np.ndarray]:
    """Image-resolution discs for the two blobs; ground truth is the right one."""
    left_px = latent_to_image(*_LEFT_CENTER)
    right_px = latent_to_image(*_RIGHT_CENTER)
    return {
        "left": disc_mask(left_px, 18.0),
        "right": disc_mask(right_px, 18.0),
    }


def singleblob_mask() -> np.ndarray:
    return disc_mask(latent_to_image(8.0, 5.5), 20.0)


def _metrics_fixture() -> list[dict]:
    """Three 4x4 samples with hand-computed IoUs 0.5, 0.0, and 1.0."""

    def grid(cells):
        m = np.zeros((4, 4), dtype=np.uint8)
        for y, x in cells:
            m[y, x] = 1
        return m

    return [
        {
            "sample_id": "m1",
            "expression": "the left box",
            "gt": grid([(0, 0), (0, 1), (1, 0), (1, 1)]),
            "pred": grid([(0, 0), (0, 1)]),
        },
        {
            "sample_id": "m2",
            "expression": "red box",
            "gt": grid([(0, 0), (0, 1)]),
            "pred": grid([(3, 2), (3, 3)]),
        },
        {
            "sample_id": "m3",
            "expression": "dog next to tree",
            "gt": grid([(2, 0), (2, 1), (2, 2)]),
            "pred": grid([(2, 0), (2, 1), (2, 2)]),
        },
    ]


def write_fixture_tree(out_dir) -> dict:
    """Emit every bundled fixture under `out_dir`; returns a path manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "proposals").mkdir(exist_ok=True)

    scenes = {"selfcorrect": selfcorrect_scene(), "singleblob": singleblob_scene()}
    scenes_path = out / "scenes.json"
    _dump_json(scenes_path, {"scenes": {k: v.to_dict() for k, v in scenes.items()}})

    masks = selfcorrect_masks()
    _dump_json(
        out / "proposals" / "selfcorrect.json",
        [
            {"id": 1, "rle": encode_rle(masks["left"])},
            {"id": 2, "rle": encode_rle(masks["right"])},
        ],
    )
    single = singleblob_mask()
    decoy = disc_mask(latent_to_image(2.5, 9.5), 12.0)
    _dump_json(
        out / "proposals" / "singleblob.json",
        [
            {"id": 1, "rle": encode_rle(single)},
            {"id": 2, "rle": encode_rle(decoy)},
        ],
    )

    x_size, y_size = IMAGE_SIZE
    dataset_path = out / "dataset.jsonl"
    with open(dataset_path, "w", encoding="utf-8") as fp:
        for sid, expr, gt, props in (
            ("selfcorrect", SELFCORRECT_EXPRESSION, masks["right"], "proposals/selfcorrect.json"),
            ("singleblob", SINGLEBLOB_EXPRESSION, single, "proposals/singleblob.json"),
        ):
            fp.write(json.dumps({
                "sample_id": sid,
                "image": {"width": x_size, "height": y_size},
                "expression": expr,
                "proposals": props,
                "gt": encode_rle(gt),
                "split_tags": ["synthetic"],
            }, sort_keys=True) + "\n")

    metrics_dir = out / "metrics"
    metrics_dir.mkdir(exist_ok=True)
    (metrics_dir / "proposals").mkdir(exist_ok=True)
    metrics_dataset = metrics_dir / "dataset.jsonl"
    predictions = {}
    with open(metrics_dataset, "w", encoding="utf-8") as fp:
        for entry in _metrics_fixture():
            prop_rel = f"proposals/{entry['sample_id']}.json"
            _dump_json(
                metrics_dir / prop_rel,
                [{"id": 1, "rle": encode_rle(entry["pred"])}],
            )
            fp.write(json.dumps({
                "sample_id": entry["sample_id"],
                "image": {"width": 4, "height": 4},
                "expression": entry["expression"],
                "proposals": prop_rel,
                "gt": encode_rle(entry["gt"]),
            }, sort_keys=True) + "\n")
            predictions[entry["sample_id"]] = {"selected_id": 1, "relaxation": "none",
                                               "scores": {}, "rle": encode_rle(entry["pred"])}
    _dump_json(metrics_dir / "predictions.json", {"samples": predictions})

    echo_dir = out / "echo" / "singleblob"
    echo_dir.mkdir(parents=True, exist_ok=True)
    scene = scenes["singleblob"]
    tokens = request_tokens(parse(SINGLEBLOB_EXPRESSION))
    h, w = scene.latent
    response = synthetic_forward(
        scene,
        BackendRequest(
            tokens=tokens,
            attention_mask=np.ones((h, w), dtype=np.uint8),
            mask_mode="feature",
            image_ref="singleblob",
        ),
    )
    save_tensor_dump(echo_dir / "attention.irpe", response.attention)
    save_tensor_dump(echo_dir / "gradients.irpe", response.gradients_raw)
    _dump_json(echo_dir / "meta.json", {
        "itm": response.itm,
        "latent": list(scene.latent),
        "image_size": list(scene.image_size),
        "tokens": len(tokens),
    })

    return {
        "scenes": str(scenes_path),
        "dataset": str(dataset_path),
        "metrics_dataset": str(metrics_dataset),
        "metrics_predictions": str(metrics_dir / "predictions.json"),
        "echo": str(out / "echo"),
    }


def _dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)
        fp.write("\n")
