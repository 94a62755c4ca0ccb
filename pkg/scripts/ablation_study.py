"""Loss-term ablation at smoke scale.

Trains one short run per loss-term subset (all terms, then each term dropped
in turn) and reports an FID row per variant so the contribution of every
term is visible. The seeded random-conv feature extractor keeps rows
comparable across machines without downloading weights; pass --pretrained to
score with Inception features when they are available.
"""

import argparse
import csv
import sys
from pathlib import Path

from synclay.data import load_dataset
from synclay.evaluation import RandomConvFeatures, default_feature_extractor, fid
from synclay.generator import ModelConfig
from synclay.inference import generate_pair
from synclay.segnet import train_segnet
from synclay.training import COMPONENT_NAMES, TrainConfig, ablate


def make_fid_fn(extractor):
    def fid_fn(model, records):
        real = [rec.image for rec in records]
        fake = [
            generate_pair(model, rec.layout, seed=i)["image"]
            for i, rec in enumerate(records)
        ]
        return fid(real, fake, extractor)

    return fid_fn


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True, help="ingested dataset root")
    parser.add_argument("--split", default="train")
    parser.add_argument("--steps", type=int, default=200, help="generator steps per variant")
    parser.add_argument("--image-size", type=int, default=64)
    parser.add_argument("--embed-dim", type=int, default=16)
    parser.add_argument("--base-channels", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pretrained", action="store_true")
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args(argv)

    records = list(load_dataset(args.data, split=args.split))
    print(f"{len(records)} records from {args.data}/{args.split}")
    segnet = train_segnet(records, seed=args.seed)

    model_config = ModelConfig(
        embed_dim=args.embed_dim,
        image_size=args.image_size,
        base_channels=args.base_channels,
    )
    # enough epochs that the step cap, not the epoch count, ends each run
    epochs = args.steps // max(1, len(records)) + 1
    config = TrainConfig(
        phase1_epochs=epochs, phase2_epochs=epochs, rng_seed=args.seed
    )

    subsets = [tuple(True for _ in COMPONENT_NAMES)]
    for drop in range(len(COMPONENT_NAMES)):
        subsets.append(tuple(i != drop for i in range(len(COMPONENT_NAMES))))

    extractor = (
        default_feature_extractor() if args.pretrained else RandomConvFeatures(seed=0)
    )
    rows = ablate(
        records,
        model_config,
        config,
        subsets,
        steps=args.steps,
        segnet=segnet,
        fid_fn=make_fid_fn(extractor),
    )

    width = max(len(row["terms"]) for row in rows)
    for row in rows:
        print(f"{row['terms']:<{width}}  fid {row['fid']:.4f}")
    if args.out:
        with open(args.out, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=["terms", "flags", "fid"])
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
