"""Frozen nuclear segmentation net: semantic class masks and the loss hook.

A compact U-shaped network stands in for the pretrained segmenter whose role
the pipeline needs: emit per-pixel class logits for generated images, stay
frozen while gradients flow back to the image. Class ids are 0 background,
1..6 the vocabulary order.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from .data import DatasetError, DatasetRecord

N_CLASSES = 7

#: Fixed mask palette (class id -> RGB); round-trips losslessly through
#: indexed PNG.
PALETTE = (
    (0x00, 0x00, 0x00),
    (0xFF, 0x00, 0x00),
    (0x00, 0xFF, 0x00),
    (0xFF, 0xFF, 0x00),
    (0x00, 0x00, 0xFF),
    (0xFF, 0x00, 0xFF),
    (0x00, 0xFF, 0xFF),
)


class _DoubleConv(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class SegmentationNet(nn.Module):
    """4-down/4-up U-shaped semantic segmentation network, 7 output classes."""

    def __init__(self, in_channels: int = 3, base: int = 16, n_classes: int = N_CLASSES):
        super().__init__()
        chs = [base * 2**i for i in range(4)]
        self.downs = nn.ModuleList()
        cin = in_channels
        for c in chs:
            self.downs.append(_DoubleConv(cin, c))
            cin = c
        self.pool = nn.MaxPool2d(2)
        self.bridge = _DoubleConv(chs[-1], chs[-1] * 2)
        self.ups = nn.ModuleList()
        self.up_convs = nn.ModuleList()
        cin = chs[-1] * 2
        for c in reversed(chs):
            self.ups.append(nn.ConvTranspose2d(cin, c, 2, stride=2))
            self.up_convs.append(_DoubleConv(c * 2, c))
            cin = c
        self.head = nn.Conv2d(chs[0], n_classes, 1)
        self.n_classes = n_classes
        self.trained = False

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        squeeze = image.ndim == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.shape[-1] % 16 or image.shape[-2] % 16:
            raise DatasetError("segnet input sides must be multiples of 16")
        skips = []
        x = image
        for down in self.downs:
            x = down(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bridge(x)
        for up, conv, skip in zip(self.ups, self.up_convs, reversed(skips)):
            x = conv(torch.cat([up(x), skip], dim=1))
        logits = self.head(x)
        return logits.squeeze(0) if squeeze else logits

    def freeze(self) -> "SegmentationNet":
        for p in self.parameters():
            p.requires_grad_(False)
            p.grad = None  # drop stale buffers from the fitting optimizer
        self.eval()
        self.trained = True
        return self


def train_segnet(
    records: Iterable[DatasetRecord],
    epochs: int = 30,
    lr: float = 1e-4,
    beta1: float = 0.5,
    base: int = 16,
    seed: int = 0,
    device: str = "cpu",
) -> SegmentationNet:
    """Train the stand-in segmenter on labeled records, return it frozen."""

    records = list(records)
    if not records:
        raise DatasetError("segnet training needs at least one record")
    torch.manual_seed(seed)
    net = SegmentationNet(base=base).to(device)
    opt = torch.optim.Adam(net.parameters(), lr=lr, betas=(beta1, 0.999))
    order = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in order.permutation(len(records)):
            rec = records[int(idx)]
            image = torch.as_tensor(rec.image, dtype=torch.float32, device=device)
            target = torch.as_tensor(rec.class_mask, dtype=torch.long, device=device)
            logits = net(image.unsqueeze(0))
            loss = F.cross_entropy(logits, target.unsqueeze(0))
            opt.zero_grad()
            loss.backward()
            opt.step()
    return net.freeze()


def segment(net: SegmentationNet, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(logits 7xHxW, argmax mask HxW) for one image.

    Requires a trained (frozen) net; gradients flow to the image only.
    """

    if not net.trained:
        raise RuntimeError("segmentation parameters not loaded; train or load first")
    logits = net(image)
    if logits.ndim == 4:
        mask = logits.argmax(dim=1)
    else:
        mask = logits.argmax(dim=0)
    return logits, mask


def pixel_accuracy(net: SegmentationNet, records: Iterable[DatasetRecord]) -> float:
    correct = 0
    total = 0
    with torch.no_grad():
        for rec in records:
            image = torch.as_tensor(rec.image, dtype=torch.float32)
            _, mask = segment(net, image)
            gt = torch.as_tensor(rec.class_mask, dtype=torch.long)
            correct += int((mask == gt).sum())
            total += gt.numel()
    if total == 0:
        raise DatasetError("accuracy needs at least one record")
    return correct / total


def save_class_mask_png(mask: np.ndarray, path) -> None:
    """Write a class mask as an 8-bit indexed PNG with the fixed palette."""

    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() >= len(PALETTE):
        raise DatasetError(f"class ids must lie in 0..{len(PALETTE) - 1}")
    img = Image.fromarray(mask.astype(np.uint8), mode="P")
    flat = [c for rgb in PALETTE for c in rgb]
    img.putpalette(flat + [0] * (768 - len(flat)))
    img.save(path)


def load_class_mask_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "P":
        raise DatasetError(f"{path}: expected an indexed PNG")
    return np.asarray(img, dtype=np.int32)


def save_segnet(net: SegmentationNet, path) -> None:
    torch.save(
        {"state": net.state_dict(), "base": net.downs[0].net[0].out_channels},
        Path(path),
    )


def load_segnet(path, device: str = "cpu") -> SegmentationNet:
    blob = torch.load(Path(path), map_location=device, weights_only=True)
    net = SegmentationNet(base=blob["base"])
    net.load_state_dict(blob["state"])
    return net.freeze()
