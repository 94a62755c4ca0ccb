"""Layout-to-pair inference: image plus nuclei class mask from a layout."""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch

from .generator import SynthesisModel
from .layout import CellularLayout
from .segnet import SegmentationNet, segment


def generate_pair(
    model: SynthesisModel,
    layout: CellularLayout,
    seed: Optional[int] = None,
    segnet: Optional[SegmentationNet] = None,
) -> dict:
    """Deterministic (layout, seed, parameters) -> image [+ class mask].

    Cells with explicit noise or a seed keep it; the request seed only feeds
    cells without one. An empty layout yields the image of the all-zero
    intermediate tensor and an all-background mask without consulting the
    segmentation net.
    """

    rng = np.random.default_rng(0 if seed is None else seed)
    model.eval()
    with torch.no_grad():
        out = model.synthesize(layout, rng=rng)
        image = out["image"]
        result = {
            "image": image.detach().cpu().numpy().astype(np.float32),
            "masks": out["masks"].detach().cpu().numpy().astype(np.float32),
        }
        if segnet is not None:
            if len(layout.cells) == 0:
                side = model.config.image_size
                result["class_mask"] = np.zeros((side, side), dtype=np.int32)
            else:
                _, mask = segment(segnet, image.float())
                result["class_mask"] = mask.detach().cpu().numpy().astype(np.int32)
    return result
