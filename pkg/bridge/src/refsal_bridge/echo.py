"""Echo session: replays recorded tensor dumps, no model required.

Fixture layout: one directory per image id containing attention.irpe,
gradients.irpe, and meta.json with itm, latent, image_size, and the token
count the dumps were recorded for. Feature-mode requests get the recorded
tensors with masked cells zeroed; an all-ones mask replays them verbatim.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dumps import DumpError, load_dump
from .protocol import ProtocolError


class EchoSession:
    def __init__(self, fixture_dir):
        root = Path(fixture_dir)
        self._images: dict[str, dict] = {}
        latent = None
        for meta_path in sorted(root.glob("*/meta.json")):
            image_dir = meta_path.parent
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            entry = {
                "attention": load_dump(image_dir / "attention.irpe"),
                "gradients": load_dump(image_dir / "gradients.irpe"),
                "itm": float(meta["itm"]),
                "latent": (int(meta["latent"][0]), int(meta["latent"][1])),
                "image_size": (int(meta["image_size"][0]), int(meta["image_size"][1])),
            }
            if entry["attention"].shape != entry["gradients"].shape:
                raise DumpError(f"{image_dir}: attention/gradient shapes differ")
            if entry["attention"].shape[1:] != entry["latent"]:
                raise DumpError(f"{image_dir}: dump grid does not match meta latent")
            if latent is None:
                latent = entry["latent"]
            elif latent != entry["latent"]:
                raise DumpError(f"{image_dir}: mixed latent grids in one fixture set")
            self._images[image_dir.name] = entry
        if not self._images:
            raise DumpError(f"no echo fixtures under {root}")
        self.latent = latent

    @property
    def capabilities(self):
        return ("forward", "echo")

    def forward(self, image: str, tokens: list[str], mask: np.ndarray, mask_mode: str):
        try:
            entry = self._images[image]
        except KeyError:
            raise ProtocolError(f"unknown image {image!r}") from None
        attention = entry["attention"]
        gradients = entry["gradients"]
        if len(tokens) != attention.shape[0]:
            raise ProtocolError(
                f"dumps for {image!r} hold {attention.shape[0]} token rows, "
                f"request has {len(tokens)}"
            )
        if mask.shape != entry["latent"]:
            raise ProtocolError(
                f"mask shape {mask.shape} does not match latent {entry['latent']}"
            )
        if mask_mode == "feature" and not mask.all():
            keep = mask.astype(np.float32)
            attention = attention * keep
            gradients = gradients * keep
        return attention, gradients, entry["itm"], entry["latent"], entry["image_size"]
