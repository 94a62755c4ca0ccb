"""Discriminators: patch-level image realism map and per-cell crop scores.

Both nets emit raw logits; sigmoids live inside the loss terms for numerical
stability.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layout import BoundingBox, LayoutError

CROP_SIDE = 64


class ImageDiscriminator(nn.Module):
    """Patch discriminator: 3x256x256 -> 1x7x7 logit map.

    Five 4x4 stride-2 convolutions (16, 32, 64, 128, 256 channels) with leaky
    ReLU, instance-normalized from the second block on, then a stride-1 4x4
    convolution to one channel. The normalization follows the activation,
    matching the layer order of the reference stack.
    """

    def __init__(self, in_channels: int = 3):
        super().__init__()
        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, 16, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        channels = [16, 32, 64, 128, 256]
        for cin, cout in zip(channels[:-1], channels[1:]):
            layers.append(nn.Conv2d(cin, cout, 4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            layers.append(nn.InstanceNorm2d(cout))
        layers.append(nn.Conv2d(256, 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)
        self.in_channels = in_channels

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        squeeze = image.ndim == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.shape[1] != self.in_channels:
            raise LayoutError(f"expected {self.in_channels}-channel images")
        if image.shape[-1] < 32 or image.shape[-2] < 32:
            raise LayoutError("input too small for five stride-2 stages")
        out = self.net(image)
        return out.squeeze(0) if squeeze else out


def crop_and_resize(
    image: torch.Tensor, bbox: BoundingBox, side: int = CROP_SIDE
) -> torch.Tensor:
    """Bilinear resample of a bbox region to a fixed square crop.

    Differentiable with respect to the image; the bbox is data, not a
    learnable quantity.
    """

    squeeze = image.ndim == 3
    if squeeze:
        image = image.unsqueeze(0)
    _, _, h, w = image.shape
    if bbox.x1 <= bbox.x0 or bbox.y1 <= bbox.y0:
        raise LayoutError(f"degenerate bbox {bbox}")
    if bbox.x0 < 0 or bbox.y0 < 0 or bbox.x1 > w or bbox.y1 > h:
        raise LayoutError(f"bbox {bbox} outside the {w}x{h} canvas")
    region = image[:, :, bbox.y0 : bbox.y1, bbox.x0 : bbox.x1]
    crop = F.interpolate(region, size=(side, side), mode="bilinear", align_corners=False)
    return crop.squeeze(0) if squeeze else crop


class CellDiscriminator(nn.Module):
    """Scalar realism score of a 3x64x64 cell crop.

    Three unpadded 5x5 stride-2 convolutions (16, 32, 64), batch-normalized
    with leaky ReLU on the first two; the reference table lists no activation
    after the third, a leaky ReLU is applied there anyway for consistency.
    Global average pooling to 64, then affine maps 64 -> 1024 -> 1.
    """

    def __init__(self, in_channels: int = 3):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 16, 5, stride=2)
        self.bn1 = nn.BatchNorm2d(16)
        self.conv2 = nn.Conv2d(16, 32, 5, stride=2)
        self.bn2 = nn.BatchNorm2d(32)
        self.conv3 = nn.Conv2d(32, 64, 5, stride=2)
        self.fc1 = nn.Linear(64, 1024)
        self.fc2 = nn.Linear(1024, 1)

    def forward(self, crop: torch.Tensor) -> torch.Tensor:
        squeeze = crop.ndim == 3
        if squeeze:
            crop = crop.unsqueeze(0)
        if crop.shape[-2:] != (CROP_SIDE, CROP_SIDE):
            raise LayoutError(f"cell crops must be {CROP_SIDE}x{CROP_SIDE}")
        x = F.leaky_relu(self.bn1(self.conv1(crop)), 0.2)
        x = F.leaky_relu(self.bn2(self.conv2(x)), 0.2)
        x = F.leaky_relu(self.conv3(x), 0.2)
        pooled = x.mean(dim=(2, 3))
        score = self.fc2(self.fc1(pooled)).squeeze(-1)
        return score.squeeze(0) if squeeze else score
