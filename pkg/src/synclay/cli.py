"""Command line entry points.

Configuration precedence is flags > SYNCLAY_* environment variables > TOML
config file (--config). The env layer comes from click's auto_envvar_prefix;
the file layer is loaded into the context default map before dispatch.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib


def _load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


@click.group(context_settings={"auto_envvar_prefix": "SYNCLAY"})
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.pass_context
def main(ctx, config):
    """Layout-conditioned histology image synthesis."""

    if config is not None:
        ctx.default_map = _load_config(config)


@main.group()
def layout():
    """Create and inspect cellular layouts."""


@layout.command("synth")
@click.option("--grade", type=click.Choice(["normal", "low", "high"]), default="normal")
@click.option(
    "--cellularity",
    "cellularity",
    multiple=True,
    help="name=value, repeatable; value in [0,1]",
)
@click.option("--seed", type=int, default=0)
@click.option("--gland-count", type=int, default=None)
@click.option("--image-size", type=int, default=256)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def layout_synth(grade, cellularity, seed, gland_count, image_size, out):
    """Synthesize a parametric layout and write it as JSON."""

    from .layout import save_layout
    from .synth import LayoutParams, PlacementError, synthesize_layout

    cellularities = {}
    for item in cellularity:
        name, _, value = item.partition("=")
        if not value:
            raise click.BadParameter(f"expected name=value, got {item!r}")
        cellularities[name] = float(value)
    params = LayoutParams(
        grade=grade,
        cellularities=cellularities,
        image_size=image_size,
        gland_count=gland_count,
        rng_seed=seed,
    )
    try:
        result = synthesize_layout(params)
    except PlacementError as exc:
        raise click.ClickException(
            f"{exc} (placed {exc.achieved} of {exc.requested})"
        )
    save_layout(result, out)
    click.echo(f"wrote {out} ({len(result.cells)} cells)")


@main.command()
@click.option("--format", "fmt", type=click.Choice(["conic", "pannuke"]), required=True)
@click.option("--in", "src", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--split", default="train")
@click.option("--limit", type=int, default=None)
def ingest(fmt, src, out, split, limit):
    """Convert a public nucleus dataset into the on-disk layout."""

    from .data import convert_conic, convert_pannuke

    convert = convert_conic if fmt == "conic" else convert_pannuke
    count = convert(src, out, split=split, limit=limit)
    click.echo(f"converted {count} records into {out}/{split}")


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--split", default="train")
@click.option("--segnet", "segnet_path", type=click.Path(exists=True), default=None)
@click.option("--steps", type=int, default=None, help="cap steps per phase (debug)")
@click.option("--image-size", type=int, default=256)
@click.option("--embed-dim", type=int, default=32)
@click.option("--variant", type=click.Choice(["baseline", "gcn"]), default="baseline")
@click.option("--phase1-epochs", type=int, default=100)
@click.option("--phase2-epochs", type=int, default=20)
@click.option("--lr", type=float, default=1e-4)
@click.option("--seed", type=int, default=0)
@click.option("--resume", type=click.Path(exists=True), default=None)
def train(
    data,
    out,
    split,
    segnet_path,
    steps,
    image_size,
    embed_dim,
    variant,
    phase1_epochs,
    phase2_epochs,
    lr,
    seed,
    resume,
):
    """Run two-phase adversarial training on an ingested dataset."""

    from .data import load_dataset
    from .generator import ModelConfig
    from .segnet import load_segnet, train_segnet
    from .training import TrainConfig, train as run_train

    records = list(load_dataset(data, split=split))
    if segnet_path is not None:
        segnet = load_segnet(segnet_path)
    else:
        click.echo("no segmentation net given; fitting a stand-in on the data")
        segnet = train_segnet(records, seed=seed)
    model_config = ModelConfig(
        embed_dim=embed_dim, image_size=image_size, variant=variant
    )
    config = TrainConfig(
        lr=lr,
        phase1_epochs=phase1_epochs,
        phase2_epochs=phase2_epochs,
        rng_seed=seed,
    )
    result = run_train(
        records,
        model_config,
        config,
        segnet=segnet,
        out_dir=out,
        max_steps=steps,
        resume_from=resume,
    )
    click.echo(f"checkpoint {result['checkpoint_id']} written to {out}")


@main.group(name="eval")
def eval_group():
    """Evaluation utilities."""


@eval_group.command("fid")
@click.option("--real", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--fake", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--split", default="test")
def eval_fid(real, fake, split):
    """Frechet distance between two ingested image sets."""

    from .data import load_dataset
    from .evaluation import default_feature_extractor, fid

    extractor = default_feature_extractor()
    real_images = [r.image for r in load_dataset(real, split=split)]
    fake_images = [r.image for r in load_dataset(fake, split=split)]
    value = fid(real_images, fake_images, extractor)
    click.echo(f"fid {value:.4f}")


@eval_group.command("composition")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--augment/--no-augment", default=False)
@click.option("--n-images", type=int, default=50)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def eval_composition(data, checkpoint, augment, n_images, seed, out):
    """Train the per-type count predictor, optionally with synthetic balance."""

    from .checkpoint import load_checkpoint
    from .data import load_dataset
    from .evaluation import (
        BalancePlan,
        balance_with_synthetic,
        evaluate_predictor,
        examples_from_records,
        report_csv,
        report_markdown,
        train_composition_predictor,
    )

    train_records = list(load_dataset(data, split="train"))
    test_records = list(load_dataset(data, split="test"))
    examples = examples_from_records(train_records)
    if augment:
        if checkpoint is None:
            raise click.ClickException("--augment needs --checkpoint")
        model, _, _, segnet, _ = load_checkpoint(checkpoint)
        plan = BalancePlan(n_images=n_images, seed=seed)
        examples, table = balance_with_synthetic(examples, model, plan)
        click.echo(json.dumps(table, indent=2))
    predictor = train_composition_predictor(examples, seed=seed)
    report = evaluate_predictor(predictor, examples_from_records(test_records))
    click.echo(report_markdown(report))
    if out is not None:
        Path(out).write_text(report_csv(report))
        click.echo(f"wrote {out}")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--port", type=int, default=8408)
@click.option("--host", default="127.0.0.1")
@click.option("--store", type=click.Path(dir_okay=False), default="layouts.json")
@click.option("--ui", type=click.Path(exists=True, file_okay=False), default=None,
              help="directory with a built editor bundle to serve at /")
def serve(checkpoint, port, host, store, ui):
    """Start the inference HTTP service."""

    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_dir=checkpoint, store_path=store, ui_dir=ui)
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--layout", "layout_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def infer(checkpoint, layout_path, seed, out):
    """Generate an image/mask pair for a stored layout."""

    from .checkpoint import load_checkpoint
    from .data import array_to_image
    from .inference import generate_pair
    from .layout import layout_hash, load_layout
    from .segnet import save_class_mask_png

    model, _, _, segnet, manifest = load_checkpoint(checkpoint)
    target = load_layout(layout_path)
    if seed is None:
        seed = int(np.random.default_rng().integers(0, 2**31 - 1))
    pair = generate_pair(model, target, seed=seed, segnet=segnet)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    array_to_image(pair["image"]).save(out_dir / "image.png")
    if "class_mask" in pair:
        save_class_mask_png(pair["class_mask"], out_dir / "mask.png")
    provenance = {
        "checkpoint_id": manifest.get("checkpoint_id"),
        "seed": seed,
        "layout_hash": layout_hash(target),
    }
    (out_dir / "provenance.json").write_text(json.dumps(provenance, indent=2))
    click.echo(f"wrote {out_dir}/image.png (seed {seed})")


if __name__ == "__main__":
    sys.exit(main())
