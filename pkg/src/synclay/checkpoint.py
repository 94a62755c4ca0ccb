"""Checkpoint bundle: one parameter blob per subnetwork plus a manifest.

Directory layout:

    <dir>/manifest.json
    <dir>/embed.pt  gcn.pt  maskgen.pt  encdec.pt  chanreduce.pt
    <dir>/disc_img.pt  disc_cell.pt  segnet.pt        (present when trained)
    <dir>/training_state.pt                           (optimizers, for resume)

The manifest records the model configuration, vocabulary, loss weights and
training phase; ``checkpoint_id`` is a short content hash over the generator
blobs, so provenance survives directory renames.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import torch

from .adversarial import CellDiscriminator, ImageDiscriminator
from .generator import ModelConfig, SynthesisModel
from .losses import LossWeights
from .segnet import SegmentationNet, load_segnet, save_segnet

MANIFEST_NAME = "manifest.json"

_GENERATOR_BLOBS = ("embed", "gcn", "maskgen", "encdec", "chanreduce")


class CheckpointError(RuntimeError):
    pass


def _state_blobs(model: SynthesisModel) -> dict:
    blobs = {
        "embed": model.embedder.state_dict(),
        "maskgen": model.mask_generator.state_dict(),
        "encdec": model.image_generator.state_dict(),
        "chanreduce": model.channel_reducer.state_dict(),
    }
    if model.graph_embedder is not None:
        blobs["gcn"] = model.graph_embedder.state_dict()
    return blobs


def _content_hash(blobs: dict) -> str:
    digest = hashlib.sha256()
    for name in _GENERATOR_BLOBS:
        state = blobs.get(name)
        if state is None:
            continue
        for key in sorted(state):
            digest.update(key.encode())
            digest.update(state[key].detach().cpu().numpy().tobytes())
    return digest.hexdigest()[:12]


def save_checkpoint(
    out_dir,
    model: SynthesisModel,
    disc_img: Optional[ImageDiscriminator] = None,
    disc_cell: Optional[CellDiscriminator] = None,
    segnet: Optional[SegmentationNet] = None,
    weights: Optional[LossWeights] = None,
    vocabulary: Optional[list[str]] = None,
    phase: int = 1,
    extra: Optional[dict] = None,
) -> str:
    """Write the bundle; returns the checkpoint id."""

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blobs = _state_blobs(model)
    for name, state in blobs.items():
        torch.save(state, out_dir / f"{name}.pt")
    if disc_img is not None:
        torch.save(disc_img.state_dict(), out_dir / "disc_img.pt")
    if disc_cell is not None:
        torch.save(disc_cell.state_dict(), out_dir / "disc_cell.pt")
    if segnet is not None:
        save_segnet(segnet, out_dir / "segnet.pt")
    checkpoint_id = _content_hash(blobs)
    manifest = {
        "checkpoint_id": checkpoint_id,
        "model": asdict(model.config),
        "vocabulary": vocabulary,
        "weights": asdict(weights) if weights is not None else None,
        "phase": phase,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return checkpoint_id


def load_manifest(ckpt_dir) -> dict:
    path = Path(ckpt_dir) / MANIFEST_NAME
    if not path.exists():
        raise CheckpointError(f"no manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def load_checkpoint(
    ckpt_dir, device: str = "cpu"
) -> tuple[SynthesisModel, Optional[ImageDiscriminator], Optional[CellDiscriminator], Optional[SegmentationNet], dict]:
    """Rebuild all saved subnetworks from a bundle directory."""

    ckpt_dir = Path(ckpt_dir)
    manifest = load_manifest(ckpt_dir)
    config = ModelConfig(**manifest["model"])
    model = SynthesisModel(config).to(device)

    def _load(path):
        return torch.load(path, map_location=device, weights_only=True)

    model.embedder.load_state_dict(_load(ckpt_dir / "embed.pt"))
    model.mask_generator.load_state_dict(_load(ckpt_dir / "maskgen.pt"))
    model.image_generator.load_state_dict(_load(ckpt_dir / "encdec.pt"))
    model.channel_reducer.load_state_dict(_load(ckpt_dir / "chanreduce.pt"))
    if model.graph_embedder is not None:
        gcn_path = ckpt_dir / "gcn.pt"
        if not gcn_path.exists():
            raise CheckpointError(f"gcn variant bundle is missing {gcn_path}")
        model.graph_embedder.load_state_dict(_load(gcn_path))

    disc_img = disc_cell = segnet = None
    if (ckpt_dir / "disc_img.pt").exists():
        disc_img = ImageDiscriminator().to(device)
        disc_img.load_state_dict(_load(ckpt_dir / "disc_img.pt"))
    if (ckpt_dir / "disc_cell.pt").exists():
        disc_cell = CellDiscriminator().to(device)
        disc_cell.load_state_dict(_load(ckpt_dir / "disc_cell.pt"))
    if (ckpt_dir / "segnet.pt").exists():
        segnet = load_segnet(ckpt_dir / "segnet.pt", device=device)
    return model, disc_img, disc_cell, segnet, manifest
