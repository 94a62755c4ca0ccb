"""Loss terms of the synthesis objective and their weighted combination.

Conventions that the tests pin down: the mask term is a per-mask mean
squared error summed over cells; the image term is a per-element mean L1;
the segmentation term is a mean per-pixel cross entropy; adversarial terms
are binary cross entropy on logits, with the non-saturating surrogate on the
generator side. The total is the plain left-to-right weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

from .layout import LayoutError

TensorLike = Union[torch.Tensor, float]


@dataclass(frozen=True)
class LossWeights:
    """Weights (image, mask, seg, image-adversarial, cell-adversarial)."""

    image: float = 1.0
    mask: float = 1.0
    seg: float = 0.1
    adv_image: float = 0.01
    adv_cell: float = 1.0

    def __post_init__(self) -> None:
        for name, value in self.as_dict().items():
            if value < 0:
                raise LayoutError(f"loss weight {name} must be non-negative")

    def as_dict(self) -> dict:
        return {
            "image": self.image,
            "mask": self.mask,
            "seg": self.seg,
            "adv_image": self.adv_image,
            "adv_cell": self.adv_cell,
        }

    def masked(self, flags: Sequence[bool]) -> "LossWeights":
        """Zero out disabled terms (ablation switch)."""
        if len(flags) != 5:
            raise LayoutError("expected five term flags")
        vals = [self.image, self.mask, self.seg, self.adv_image, self.adv_cell]
        return LossWeights(*(v if f else 0.0 for v, f in zip(vals, flags)))


def loss_mask(gt_masks: torch.Tensor, gen_masks: torch.Tensor) -> torch.Tensor:
    """Sum over cells of the per-mask pixel-mean squared error."""

    if gt_masks.shape[0] != gen_masks.shape[0]:
        raise LayoutError(
            f"mask count mismatch: {gt_masks.shape[0]} vs {gen_masks.shape[0]}"
        )
    if gt_masks.shape[0] == 0:
        return gen_masks.sum() * 0.0
    gt = gt_masks.reshape(gt_masks.shape[0], -1)
    gen = gen_masks.reshape(gen_masks.shape[0], -1)
    if gt.shape != gen.shape:
        raise LayoutError(f"mask shape mismatch: {gt.shape} vs {gen.shape}")
    return ((gt - gen) ** 2).mean(dim=1).sum()


def loss_image(gt_image: torch.Tensor, gen_image: torch.Tensor) -> torch.Tensor:
    """Per-element mean absolute difference."""

    if gt_image.shape != gen_image.shape:
        raise LayoutError(
            f"image shape mismatch: {tuple(gt_image.shape)} vs {tuple(gen_image.shape)}"
        )
    return (gt_image - gen_image).abs().mean()


def loss_seg(gt_mask: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel cross entropy of class logits against integer labels."""

    if logits.ndim == 3:
        logits = logits.unsqueeze(0)
    if gt_mask.ndim == 2:
        gt_mask = gt_mask.unsqueeze(0)
    n_classes = logits.shape[1]
    if gt_mask.min() < 0 or gt_mask.max() >= n_classes:
        raise LayoutError(f"labels must lie in 0..{n_classes - 1}")
    if logits.shape[-2:] != gt_mask.shape[-2:]:
        raise LayoutError("logit and label grids differ in size")
    return F.cross_entropy(logits, gt_mask.long())


def loss_adversarial(
    real_logits: Optional[torch.Tensor],
    fake_logits: torch.Tensor,
    side: str,
) -> torch.Tensor:
    """Binary cross entropy with logits, both sides of the min-max game.

    Discriminator side: BCE(real, 1) + BCE(fake, 0), both terms means over
    their logit grids. Generator side: the non-saturating BCE(fake, 1);
    ``real_logits`` is ignored and may be None.
    """

    if side == "discriminator":
        if real_logits is None:
            raise LayoutError("discriminator side needs real logits")
        real_term = F.binary_cross_entropy_with_logits(
            real_logits, torch.ones_like(real_logits)
        )
        fake_term = F.binary_cross_entropy_with_logits(
            fake_logits, torch.zeros_like(fake_logits)
        )
        return real_term + fake_term
    if side == "generator":
        return F.binary_cross_entropy_with_logits(
            fake_logits, torch.ones_like(fake_logits)
        )
    raise LayoutError(f"side must be 'generator' or 'discriminator', got {side!r}")


def loss_total(
    components: Sequence[TensorLike],
    weights: LossWeights = LossWeights(),
) -> TensorLike:
    """Weighted sum, in the fixed order (image, mask, seg, adv_img, adv_cell)."""

    if len(components) != 5:
        raise LayoutError("expected five loss components")
    w = [weights.image, weights.mask, weights.seg, weights.adv_image, weights.adv_cell]
    total = w[0] * components[0]
    for wi, ci in zip(w[1:], components[1:]):
        total = total + wi * ci
    return total
