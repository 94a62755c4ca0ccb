"""Two-phase adversarial training loop and the loss-ablation harness.

Phase 1 trains generator and discriminators without the segmentation term;
phase 2 adds the cross-entropy term through a frozen segmentation net. Per
step the update order is image discriminator, cellular discriminator, then
the generator path, each on its own optimizer. Batch size is one record.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from .adversarial import CellDiscriminator, ImageDiscriminator, crop_and_resize
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetError, DatasetRecord, array_to_image
from .generator import ModelConfig, SynthesisModel
from .layout import compute_bbox, delaunay_graph, layout_cell_vectors
from .losses import (
    LossWeights,
    loss_adversarial,
    loss_image,
    loss_mask,
    loss_seg,
    loss_total,
)
from .segnet import SegmentationNet

COMPONENT_NAMES = ("loss_image", "loss_mask", "loss_seg", "adv_image", "adv_cell")


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; a diagnostic snapshot was written if possible."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    batch_size: int = 1
    phase1_epochs: int = 100
    phase2_epochs: int = 20
    rng_seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    term_flags: tuple = (True, True, True, True, True)
    sample_every: int = 10
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.batch_size != 1:
            raise ValueError("only batch size 1 is supported")
        if len(self.term_flags) != 5:
            raise ValueError("term_flags must cover the five loss terms")


def _record_tensors(rec: DatasetRecord, device: str, noise_rng: np.random.Generator):
    real = torch.as_tensor(rec.image, dtype=torch.float32, device=device)
    vectors = torch.as_tensor(
        layout_cell_vectors(rec.layout, noise_rng), dtype=torch.float32, device=device
    )
    bboxes = [compute_bbox(c, rec.layout.canvas) for c in rec.layout.cells]
    gt_masks = (
        torch.as_tensor(np.stack(rec.per_cell_masks), dtype=torch.float32, device=device)
        if rec.per_cell_masks
        else torch.zeros((0, 64, 64), device=device)
    )
    class_mask = torch.as_tensor(rec.class_mask, dtype=torch.long, device=device)
    return real, vectors, bboxes, gt_masks, class_mask


def _adjacency(model: SynthesisModel, rec: DatasetRecord, device: str):
    if model.graph_embedder is None:
        return None
    n = len(rec.layout.cells)
    adj = torch.zeros((n, n), dtype=torch.float32, device=device)
    if n > 1:
        for i, j, _ in delaunay_graph(rec.layout).edges:
            adj[i, j] = 1.0
            adj[j, i] = 1.0
    return adj


def generator_parameters(model: SynthesisModel) -> list:
    """Trainable generator-path parameters; the channel reducer is a
    visualization head outside every loss and stays untrained."""

    params = list(model.embedder.parameters())
    if model.graph_embedder is not None:
        params += list(model.graph_embedder.parameters())
    params += list(model.mask_generator.parameters())
    params += list(model.image_generator.parameters())
    return params


def train_step(
    model: SynthesisModel,
    disc_img: ImageDiscriminator,
    disc_cell: CellDiscriminator,
    optimizers: dict,
    rec: DatasetRecord,
    weights: LossWeights,
    segnet: Optional[SegmentationNet],
    noise_rng: np.random.Generator,
    device: str = "cpu",
) -> dict:
    """One batch-1 step: D_I update, D_C update, then the generator update."""

    real, vectors, bboxes, gt_masks, class_mask = _record_tensors(rec, device, noise_rng)
    adjacency = _adjacency(model, rec, device)
    out = model(vectors, bboxes, adjacency)
    fake = out["image"]
    n_cells = len(bboxes)

    if weights.adv_image > 0:
        d_loss = loss_adversarial(
            disc_img(real), disc_img(fake.detach()), "discriminator"
        )
        optimizers["disc_img"].zero_grad()
        d_loss.backward()
        optimizers["disc_img"].step()

    fake_crops = real_crops = None
    if n_cells > 0:
        real_crops = torch.stack([crop_and_resize(real, b) for b in bboxes])
        fake_crops = torch.stack([crop_and_resize(fake, b) for b in bboxes])
    if weights.adv_cell > 0 and n_cells > 0:
        d_loss = loss_adversarial(
            disc_cell(real_crops), disc_cell(fake_crops.detach()), "discriminator"
        )
        optimizers["disc_cell"].zero_grad()
        d_loss.backward()
        optimizers["disc_cell"].step()

    zero = fake.sum() * 0.0
    l_image = loss_image(real, fake)
    l_mask = loss_mask(gt_masks, out["masks"]) if n_cells else zero
    l_seg = zero
    if weights.seg > 0:
        if segnet is None:
            raise DatasetError("segmentation term enabled without a frozen segnet")
        l_seg = loss_seg(class_mask, segnet(fake))
    l_adv_i = (
        loss_adversarial(None, disc_img(fake), "generator")
        if weights.adv_image > 0
        else zero
    )
    l_adv_c = (
        loss_adversarial(None, disc_cell(fake_crops), "generator")
        if weights.adv_cell > 0 and n_cells > 0
        else zero
    )
    total = loss_total([l_image, l_mask, l_seg, l_adv_i, l_adv_c], weights)
    if not torch.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss: image={l_image.item()} mask={l_mask.item()} "
            f"seg={l_seg.item()} adv_i={l_adv_i.item()} adv_c={l_adv_c.item()}"
        )
    optimizers["gen"].zero_grad()
    total.backward()
    optimizers["gen"].step()
    return {
        "loss_image": l_image.item(),
        "loss_mask": l_mask.item(),
        "loss_seg": l_seg.item(),
        "adv_image": l_adv_i.item(),
        "adv_cell": l_adv_c.item(),
        "total": total.item(),
    }


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "phase", *COMPONENT_NAMES, "total"]
        )
        writer.writeheader()
        writer.writerows(rows)


def _sample_grid(model: SynthesisModel, records: Sequence[DatasetRecord], path: Path) -> None:
    model.eval()
    tiles = []
    with torch.no_grad():
        for rec in records[:4]:
            real, vectors, bboxes, _, _ = _record_tensors(
                rec, "cpu", np.random.default_rng(0)
            )
            adjacency = _adjacency(model, rec, "cpu")
            fake = model(vectors, bboxes, adjacency)["image"]
            tiles.append(np.concatenate([rec.image, fake.numpy()], axis=2))
    model.train()
    grid = np.concatenate(tiles, axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    array_to_image(grid).save(path)


def train(
    records: Iterable[DatasetRecord],
    model_config: ModelConfig,
    config: TrainConfig,
    segnet: Optional[SegmentationNet] = None,
    out_dir=None,
    max_steps: Optional[int] = None,
    resume_from=None,
    phases: Sequence[int] = (1, 2),
) -> dict:
    """Run the two-phase schedule; returns nets, metrics, and checkpoint id.

    ``max_steps`` caps generator steps for smoke runs. Divergence raises
    TrainingDiverged after writing a snapshot under ``out_dir``/diverged.
    """

    records = list(records)
    if not records:
        raise DatasetError("training needs at least one record")
    run_phase2 = 2 in phases and config.phase2_epochs > 0
    if run_phase2 and segnet is None:
        raise DatasetError("phase 2 requires a frozen segnet checkpoint")
    if segnet is not None and not segnet.trained:
        raise DatasetError("segnet must be trained and frozen before use")

    torch.manual_seed(config.rng_seed)
    device = config.device
    start_phase, start_epoch = 1, 0
    if resume_from is not None:
        model, disc_img, disc_cell, seg_loaded, _ = load_checkpoint(resume_from, device)
        if segnet is None:
            segnet = seg_loaded
        state = torch.load(
            Path(resume_from) / "training_state.pt", map_location=device, weights_only=False
        )
        start_phase, start_epoch = state["phase"], state["epoch"]
    else:
        model = SynthesisModel(model_config).to(device)
        disc_img = ImageDiscriminator().to(device)
        disc_cell = CellDiscriminator().to(device)
        state = None

    gen_params = generator_parameters(model)
    optimizers = {
        "gen": torch.optim.Adam(gen_params, lr=config.lr, betas=(config.beta1, 0.999)),
        "disc_img": torch.optim.Adam(
            disc_img.parameters(), lr=config.lr, betas=(config.beta1, 0.999)
        ),
        "disc_cell": torch.optim.Adam(
            disc_cell.parameters(), lr=config.lr, betas=(config.beta1, 0.999)
        ),
    }
    gen_ids = {id(p) for p in gen_params}
    disc_ids = {id(p) for p in disc_img.parameters()} | {id(p) for p in disc_cell.parameters()}
    assert gen_ids.isdisjoint(disc_ids), "generator and discriminator parameters overlap"
    if state is not None:
        for name, opt in optimizers.items():
            opt.load_state_dict(state["optimizers"][name])

    base_weights = config.weights.masked(config.term_flags)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    metrics: list[dict] = []
    step = 0
    stop = False
    model.train()
    disc_img.train()
    disc_cell.train()

    for phase in (1, 2):
        if phase not in phases or stop:
            continue
        if phase < start_phase:
            continue
        epochs = config.phase1_epochs if phase == 1 else config.phase2_epochs
        # the segmentation term only exists in phase 2
        weights = replace(base_weights, seg=0.0) if phase == 1 else base_weights
        seg_for_phase = segnet if phase == 2 else None
        first_epoch = start_epoch if phase == start_phase else 0
        for epoch in range(first_epoch, epochs):
            order = np.random.default_rng(
                [config.rng_seed, phase, epoch]
            ).permutation(len(records))
            sums = {name: 0.0 for name in (*COMPONENT_NAMES, "total")}
            seen = 0
            for idx in order:
                noise_rng = np.random.default_rng([config.rng_seed, step, 7])
                try:
                    step_metrics = train_step(
                        model,
                        disc_img,
                        disc_cell,
                        optimizers,
                        records[int(idx)],
                        weights,
                        seg_for_phase,
                        noise_rng,
                        device,
                    )
                except TrainingDiverged:
                    if out_path is not None:
                        save_checkpoint(
                            out_path / "diverged",
                            model,
                            disc_img,
                            disc_cell,
                            segnet,
                            weights=config.weights,
                            phase=phase,
                            extra={"diverged_at_step": step},
                        )
                        _write_metrics(out_path / "metrics.csv", metrics)
                    raise
                for name, value in step_metrics.items():
                    sums[name] += value
                seen += 1
                step += 1
                if max_steps is not None and step >= max_steps:
                    stop = True
                    break
            row = {name: sums[name] / max(seen, 1) for name in sums}
            row.update(epoch=epoch, phase=phase)
            metrics.append(row)
            if out_path is not None:
                _write_metrics(out_path / "metrics.csv", metrics)
                if (epoch + 1) % config.sample_every == 0 or stop:
                    _sample_grid(
                        model, records, out_path / "samples" / f"phase{phase}_epoch{epoch:04d}.png"
                    )
                torch.save(
                    {
                        "phase": phase,
                        "epoch": epoch + 1,
                        "optimizers": {k: o.state_dict() for k, o in optimizers.items()},
                    },
                    out_path / "training_state.pt",
                )
            if stop:
                break

    checkpoint_id = None
    if out_path is not None:
        checkpoint_id = save_checkpoint(
            out_path,
            model,
            disc_img,
            disc_cell,
            segnet,
            weights=config.weights,
            vocabulary=[t.name for t in records[0].layout.types],
            phase=2 if run_phase2 else 1,
        )
    return {
        "model": model,
        "disc_img": disc_img,
        "disc_cell": disc_cell,
        "segnet": segnet,
        "metrics": metrics,
        "checkpoint_id": checkpoint_id,
        "steps": step,
    }


def ablate(
    records: Iterable[DatasetRecord],
    model_config: ModelConfig,
    config: TrainConfig,
    subsets: Sequence[Sequence[bool]],
    steps: int,
    segnet: Optional[SegmentationNet] = None,
    fid_fn=None,
) -> list[dict]:
    """Short training run per loss-term subset; one FID row per subset.

    ``fid_fn(model, records) -> float`` supplies the metric so callers pick
    the feature extractor; rows echo the enabled terms.
    """

    records = list(records)
    rows = []
    for flags in subsets:
        sub_config = replace(config, term_flags=tuple(bool(f) for f in flags))
        phases = (1, 2) if (sub_config.term_flags[2] and segnet is not None) else (1,)
        result = train(
            records,
            model_config,
            sub_config,
            segnet=segnet,
            max_steps=steps,
            phases=phases,
        )
        row = {
            "terms": "+".join(
                name for name, on in zip(COMPONENT_NAMES, sub_config.term_flags) if on
            )
            or "none",
            "flags": sub_config.term_flags,
        }
        if fid_fn is not None:
            row["fid"] = float(fid_fn(result["model"], records))
        rows.append(row)
    return rows
