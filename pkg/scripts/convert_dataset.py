#!/usr/bin/env python3
"""Convert a COCO-style referring-expression export to the engine's format.

This is a mapping stub, not a benchmark loader: it documents how external
sources line up with the JSON-lines dataset the harness consumes, and
converts the minimal schema below. Anything else should be massaged into
this shape first.

Expected input (one JSON file):

    {
      "images": [{"id": 17, "width": 640, "height": 480, "file_name": "17.jpg"}],
      "annotations": [
        {"image_id": 17, "expression": "the left dog",
         "mask": {"size": [480, 640], "counts": [...]},     # row-major RLE
         "proposals": "proposals/17.json"}                   # optional
      ]
    }

Mapping notes for benchmark-style sources:
  - one output record per (image, expression) pair; sample_id is
    "<image_id>_<n>" over that image's expressions
  - ground-truth masks must be row-major zero-run-first RLE (column-major
    encodings from COCO tooling need re-encoding; polygons need rasterizing)
  - proposal files are external; point each record at one (the engine never
    generates proposals)
  - the image id becomes the backend identifier, so the model server must
    resolve it (e.g. to a file under its image root)
"""

import argparse
import json
import sys
from pathlib import Path


def convert(source: dict):
    images = {img["id"]: img for img in source["images"]}
    counters = {}
    for ann in source["annotations"]:
        image = images[ann["image_id"]]
        n = counters.get(image["id"], 0)
        counters[image["id"]] = n + 1
        mask = ann["mask"]
        if mask["size"] != [image["height"], image["width"]]:
            raise ValueError(
                f"annotation for image {image['id']} has mask size {mask['size']}, "
                f"image is {image['height']}x{image['width']}"
            )
        yield {
            "sample_id": f"{image['id']}_{n}",
            "image": {
                "width": image["width"],
                "height": image["height"],
                "id": str(image["id"]),
                **({"path": image["file_name"]} if image.get("file_name") else {}),
            },
            "expression": ann["expression"],
            **({"proposals": ann["proposals"]} if ann.get("proposals") else {}),
            "gt": mask,
            "split_tags": list(ann.get("split_tags", ())),
        }


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("source", help="COCO-style JSON export")
    parser.add_argument("out", help="output dataset (.jsonl)")
    args = parser.parse_args()
    source = json.loads(Path(args.source).read_text(encoding="utf-8"))
    with open(args.out, "w", encoding="utf-8") as fp:
        count = 0
        for record in convert(source):
            fp.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    print(f"wrote {count} records to {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
