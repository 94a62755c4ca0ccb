"""Frozen semantic head: architecture, freezing, palette round trip."""

import numpy as np
import pytest
import torch

from synclay.data import DatasetError
from synclay.segnet import (
    N_CLASSES,
    PALETTE,
    SegmentationNet,
    load_class_mask_png,
    load_segnet,
    pixel_accuracy,
    save_class_mask_png,
    save_segnet,
    segment,
    train_segnet,
)


class TestArchitecture:
    def test_logit_shape(self):
        net = SegmentationNet()
        out = net(torch.randn(2, 3, 64, 64))
        assert out.shape == (2, N_CLASSES, 64, 64)

    def test_input_must_be_multiple_of_16(self):
        net = SegmentationNet()
        with pytest.raises(DatasetError):
            net(torch.randn(1, 3, 60, 60))

    def test_seven_classes(self):
        assert N_CLASSES == 7
        assert len(PALETTE) == 7

    def test_palette_starts_black(self):
        assert PALETTE[0] == (0, 0, 0)
        assert len(set(PALETTE)) == 7  # all colors distinct


class TestFreezing:
    def test_freeze_disables_gradients(self, tiny_records):
        net = train_segnet(tiny_records[:2], epochs=1, seed=0)
        assert net.trained
        assert all(not p.requires_grad for p in net.parameters())
        assert not net.training

    def test_segment_requires_training(self):
        net = SegmentationNet()
        with pytest.raises(RuntimeError, match="train"):
            segment(net, torch.randn(3, 64, 64))

    def test_segment_output(self, tiny_records):
        net = train_segnet(tiny_records[:2], epochs=1, seed=0)
        logits, labels = segment(net, torch.from_numpy(tiny_records[0].image))
        assert logits.shape == (N_CLASSES, 64, 64)
        assert labels.shape == (64, 64)
        assert labels.max() < N_CLASSES and labels.min() >= 0

    def test_empty_records_rejected(self):
        with pytest.raises(DatasetError):
            train_segnet([], epochs=1)


class TestAccuracy:
    def test_pixel_accuracy_bounded(self, tiny_records):
        net = train_segnet(tiny_records[:2], epochs=2, seed=0)
        acc = pixel_accuracy(net, tiny_records[:2])
        assert 0.0 <= acc <= 1.0

    def test_training_actually_fits(self, tiny_records):
        # two epochs on two records should beat uniform guessing on them
        net = train_segnet(tiny_records[:2], epochs=30, seed=0)
        acc = pixel_accuracy(net, tiny_records[:2])
        assert acc > 1.0 / N_CLASSES


class TestPalettePng:
    def test_round_trip_lossless(self, tmp_path, rng):
        mask = rng.integers(0, N_CLASSES, size=(32, 32)).astype(np.int64)
        save_class_mask_png(mask, tmp_path / "m.png")
        back = load_class_mask_png(tmp_path / "m.png")
        assert np.array_equal(back, mask)

    def test_byte_identical_across_writes(self, tmp_path, rng):
        mask = rng.integers(0, N_CLASSES, size=(16, 16)).astype(np.int64)
        save_class_mask_png(mask, tmp_path / "a.png")
        save_class_mask_png(mask, tmp_path / "b.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_palette_colors_written(self, tmp_path):
        from PIL import Image

        mask = np.arange(7, dtype=np.int64).reshape(1, 7)
        save_class_mask_png(mask, tmp_path / "p.png")
        img = Image.open(tmp_path / "p.png").convert("RGB")
        row = np.array(img)[0]
        assert [tuple(px) for px in row] == list(PALETTE)


class TestSerialization:
    def test_save_load_round_trip(self, tmp_path, tiny_records):
        net = train_segnet(tiny_records[:2], epochs=1, base=16, seed=0)
        save_segnet(net, tmp_path / "seg.pt")
        loaded = load_segnet(tmp_path / "seg.pt")
        assert loaded.trained
        x = torch.randn(1, 3, 64, 64)
        with torch.no_grad():
            torch.testing.assert_close(net(x), loaded(x), atol=0, rtol=0)
