"""Synthetic balancing study for the composition predictor.

For each seed, trains the per-type count predictor twice on the same ingested
dataset: once as-is and once with synthetic minority-heavy images appended by
the generator checkpoint. Reports the per-type Spearman correlation on the
test split before and after, plus the mean change for the minority types the
balancing plan targets.
"""

import argparse
import statistics
import sys

from synclay.checkpoint import load_checkpoint
from synclay.data import load_dataset
from synclay.evaluation import (
    BalancePlan,
    balance_with_synthetic,
    evaluate_predictor,
    examples_from_records,
    train_composition_predictor,
)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data", required=True, help="ingested dataset root")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--n-images", type=int, default=50)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument(
        "--types", nargs="*", default=["neutrophil", "eosinophil"],
        help="minority types to report",
    )
    args = parser.parse_args(argv)

    model, *_ = load_checkpoint(args.checkpoint)
    base_examples = examples_from_records(load_dataset(args.data, split="train"))
    test_examples = examples_from_records(load_dataset(args.data, split="test"))
    print(f"{len(base_examples)} train / {len(test_examples)} test examples")

    diffs = {name: [] for name in args.types}
    for seed in range(args.seeds):
        baseline = train_composition_predictor(
            base_examples, epochs=args.epochs, seed=seed
        )
        base_table = evaluate_predictor(baseline, test_examples)

        plan = BalancePlan(n_images=args.n_images, seed=seed)
        augmented_examples, added = balance_with_synthetic(base_examples, model, plan)
        print(f"seed {seed}: added {added['added_images']} synthetic images")
        augmented = train_composition_predictor(
            augmented_examples, epochs=args.epochs, seed=seed
        )
        aug_table = evaluate_predictor(augmented, test_examples)

        for name in args.types:
            before = base_table[name]["spearman"]
            after = aug_table[name]["spearman"]
            if before is None or after is None:
                print(f"  {name}: undefined (constant counts on this split)")
                continue
            diffs[name].append(after - before)
            print(f"  {name}: spearman {before:+.3f} -> {after:+.3f}")

    print()
    for name, values in diffs.items():
        if values:
            print(f"{name}: mean spearman change {statistics.mean(values):+.3f}"
                  f" over {len(values)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
