#!/usr/bin/env python3
"""Sweep the heatmap blend factor and report fixture accuracy.

The blend factor trades inertia (history) against the newest saliency map.
This prints IoU on the two-blob scene across the sweep so the sensitivity
of the default can be inspected. The drop threshold can be swept too.
"""

import argparse

import numpy as np

from refsal.backend import SyntheticBackend
from refsal.fixtures import SELFCORRECT_EXPRESSION, selfcorrect_masks, selfcorrect_scene
from refsal.heatmap import argmax_coords
from refsal.metrics import iou
from refsal.parsing import parse
from refsal.refinement import RefinementConfig, run_refinement
from refsal.selection import MaskProposal, select_mask


def fixture_iou(blend, threshold, nu):
    backend = SyntheticBackend({"sc": selfcorrect_scene()})
    parsed = parse(SELFCORRECT_EXPRESSION)
    masks = selfcorrect_masks()
    proposals = [MaskProposal(1, masks["left"]), MaskProposal(2, masks["right"])]
    cfg = RefinementConfig(blend=blend, drop_threshold=threshold, max_iterations=nu)
    state = run_refinement(backend, parsed, "sc", cfg)
    heat = state.image_heatmap()
    sel = select_mask(proposals, argmax_coords(heat), heat)
    chosen = masks["left"] if sel.selected_id == 1 else masks["right"]
    return iou(chosen, masks["right"]), state.committed


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--nu", type=int, default=3)
    parser.add_argument("--theta", type=float, default=0.5)
    parser.add_argument("--steps", type=int, default=11)
    args = parser.parse_args()

    print(f"{'blend':>6} {'IoU':>6} {'iters':>6}")
    for blend in np.linspace(0.0, 1.0, args.steps):
        value, committed = fixture_iou(float(blend), args.theta, args.nu)
        print(f"{blend:>6.2f} {value:>6.2f} {committed:>6}")


if __name__ == "__main__":
    main()
