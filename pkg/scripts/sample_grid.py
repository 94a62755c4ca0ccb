"""Render a qualitative grid from a checkpoint: grades x cellularity levels.

Synthesizes one layout per (grade, cellularity) cell, renders it, and tiles
the images into a single PNG with the class-mask panel alongside when the
checkpoint carries a segmentation net. Useful for eyeballing whether grade
and density controls actually move the output.
"""

import argparse
import sys

import numpy as np
from PIL import Image

from synclay.checkpoint import load_checkpoint
from synclay.data import array_to_image
from synclay.inference import generate_pair
from synclay.synth import GRADES, LayoutParams, synthesize_layout

LEVELS = (0.2, 0.5, 0.8)

#: fixed palette for the 7-value class mask (background + 6 types)
PALETTE = np.array(
    [
        (20, 20, 20),
        (214, 39, 40),
        (31, 119, 180),
        (44, 160, 44),
        (255, 127, 14),
        (148, 103, 189),
        (140, 86, 75),
    ],
    dtype=np.uint8,
)


def colorize(class_mask):
    return Image.fromarray(PALETTE[np.clip(class_mask, 0, len(PALETTE) - 1)])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--out", default="sample_grid.png")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pad", type=int, default=4)
    args = parser.parse_args(argv)

    model, _, _, segnet, manifest = load_checkpoint(args.checkpoint)
    side = model.config.image_size
    print(f"checkpoint {manifest['checkpoint_id']} (canvas {side}x{side})")

    tiles = []
    for row, grade in enumerate(GRADES):
        for col, level in enumerate(LEVELS):
            params = LayoutParams(
                grade=grade,
                cellularities={
                    "epithelial": level,
                    "lymphocyte": level / 2,
                    "connective": level / 2,
                },
                image_size=side,
                rng_seed=args.seed + row * len(LEVELS) + col,
            )
            layout = synthesize_layout(params)
            pair = generate_pair(model, layout, seed=args.seed, segnet=segnet)
            tile = array_to_image(pair["image"])
            if "class_mask" in pair:
                strip = Image.new("RGB", (side * 2 + args.pad, side), "white")
                strip.paste(tile, (0, 0))
                strip.paste(colorize(pair["class_mask"]), (side + args.pad, 0))
                tile = strip
            tiles.append((row, col, tile))
            print(f"  {grade:>6} @ {level}: {len(layout.cells)} cells")

    tile_w, tile_h = tiles[0][2].size
    grid = Image.new(
        "RGB",
        (
            len(LEVELS) * (tile_w + args.pad) - args.pad,
            len(GRADES) * (tile_h + args.pad) - args.pad,
        ),
        "white",
    )
    for row, col, tile in tiles:
        grid.paste(tile, (col * (tile_w + args.pad), row * (tile_h + args.pad)))
    grid.save(args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
