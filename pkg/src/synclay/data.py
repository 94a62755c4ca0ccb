"""Dataset ingest: nuclei masks to layouts, size statistics, on-disk loading.

On-disk format (one directory per split):

    <root>/<split>/images/<name>.png   RGB tile
    <root>/<split>/masks/<name>.png    16-bit grayscale; value = instance*256 + class
                                       (high byte instance id, low byte class id)

Class ids follow the vocabulary order with 0 reserved for background, so id 1
is neutrophil and id 6 is connective. Converters for the two public raw
formats live at the bottom of the module.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .layout import (
    Cell,
    CellType,
    CellularLayout,
    LayoutError,
    conic_vocabulary,
)

#: Side of the common frame per-cell ground-truth masks are rescaled to.
CELL_MASK_SIDE = 64


class DatasetError(RuntimeError):
    """Raised for malformed records or missing splits."""


@dataclass
class DatasetRecord:
    """One training triple plus the per-cell supervision masks.

    ``image`` is 3xHxW float32 in [-1, 1]. ``per_cell_masks[k]`` is the binary
    mask of ``layout.cells[k]`` cropped to its bounding box and rescaled to
    the 64x64 frame the mask generator predicts in.
    """

    image: np.ndarray
    instance_mask: np.ndarray
    class_mask: np.ndarray
    layout: CellularLayout
    per_cell_masks: list[np.ndarray]
    name: str = ""

    def validate(self) -> None:
        if self.instance_mask.shape != self.class_mask.shape:
            raise DatasetError(f"{self.name}: mask shapes differ")
        if len(self.per_cell_masks) != len(self.layout.cells):
            raise DatasetError(f"{self.name}: per-cell mask count mismatch")
        fg_inst = self.instance_mask > 0
        fg_cls = self.class_mask > 0
        if not np.array_equal(fg_inst, fg_cls):
            raise DatasetError(f"{self.name}: instance/class foreground disagree")


@dataclass(frozen=True)
class TypeSize:
    mean_width: float
    std_width: float
    mean_height: float
    std_height: float
    count: int


@dataclass
class SizeStatistics:
    """Per-type bounding-box size moments, in pixels.

    Types without a single sample are absent from ``per_type``.
    """

    per_type: dict[str, TypeSize]

    def sample_size(
        self, type_name: str, rng: np.random.Generator, lo: int = 3, hi: int = 64
    ) -> tuple[int, int]:
        st = self.per_type[type_name]
        w = int(np.clip(round(rng.normal(st.mean_width, st.std_width)), lo, hi))
        h = int(np.clip(round(rng.normal(st.mean_height, st.std_height)), lo, hi))
        return w, h

    def to_json(self) -> dict:
        return {
            name: {
                "mean_width": st.mean_width,
                "std_width": st.std_width,
                "mean_height": st.mean_height,
                "std_height": st.std_height,
                "count": st.count,
            }
            for name, st in self.per_type.items()
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SizeStatistics":
        return cls(
            per_type={name: TypeSize(**fields) for name, fields in obj.items()}
        )


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2-D array with half-pixel-centre bilinear interpolation.

    Source coordinate of output pixel d is max(0, (d + 0.5) * scale - 0.5)
    with border clamping, the same convention the torch resampling ops use.
    """

    src = np.asarray(arr, dtype=np.float64)
    in_h, in_w = src.shape
    ys = np.maximum((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0)
    xs = np.maximum((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0)
    y0 = np.minimum(np.floor(ys).astype(int), in_h - 1)
    x0 = np.minimum(np.floor(xs).astype(int), in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1 - wx) + src[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def connected_components(binary: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 8-connected foreground components; returns (labels, count)."""

    structure = np.ones((3, 3), dtype=bool)
    labels, count = ndimage.label(np.asarray(binary) > 0, structure=structure)
    return labels.astype(np.int32), int(count)


def _majority_class(labels: np.ndarray) -> int:
    fg = labels[labels > 0]
    if fg.size == 0:
        return 0
    return int(np.bincount(fg).argmax())


def extract_layout_from_mask(
    instance_mask: np.ndarray,
    class_mask: np.ndarray,
    types: Optional[Sequence[CellType]] = None,
    canvas: Optional[tuple[int, int]] = None,
    expected_ids: Optional[Iterable[int]] = None,
) -> tuple[CellularLayout, list[np.ndarray]]:
    """Turn paired instance/class masks into a layout plus per-cell masks.

    One cell per instance id, in ascending id order: type is the majority
    class under the instance, location the pixel-index centroid normalized by
    the canvas, size the tight bounding rectangle. The instance's binary mask
    is cropped to that rectangle and rescaled to the 64x64 ground-truth frame.
    """

    instance_mask = np.asarray(instance_mask)
    class_mask = np.asarray(class_mask)
    if instance_mask.shape != class_mask.shape:
        raise DatasetError("instance and class masks must share a shape")
    if instance_mask.min() < 0:
        raise DatasetError("instance ids must be non-negative")
    vocabulary = list(types) if types is not None else conic_vocabulary()
    h_canvas, w_canvas = instance_mask.shape
    if canvas is None:
        canvas = (w_canvas, h_canvas)

    present = [int(i) for i in np.unique(instance_mask) if i > 0]
    ids = present
    if expected_ids is not None:
        present_set = set(present)
        ids = []
        for i in expected_ids:
            if i in present_set:
                ids.append(int(i))
            else:
                warnings.warn(f"instance {i} has zero area, skipped", stacklevel=2)

    cells: list[Cell] = []
    per_cell_masks: list[np.ndarray] = []
    for inst_id in ids:
        support = instance_mask == inst_id
        ys, xs = np.nonzero(support)
        class_id = _majority_class(class_mask[ys, xs])
        if class_id == 0:
            warnings.warn(f"instance {inst_id} has no class label, skipped", stacklevel=2)
            continue
        if class_id > len(vocabulary):
            raise DatasetError(f"instance {inst_id}: class id {class_id} out of range")
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        cells.append(
            Cell(
                cell_type=vocabulary[class_id - 1],
                x=float(xs.mean()) / canvas[0],
                y=float(ys.mean()) / canvas[1],
                width=x1 - x0 + 1,
                height=y1 - y0 + 1,
            )
        )
        crop = support[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
        resized = bilinear_resize(crop, CELL_MASK_SIDE, CELL_MASK_SIDE)
        per_cell_masks.append((resized >= 0.5).astype(np.float32))

    layout = CellularLayout(cells=cells, types=vocabulary, canvas=canvas)
    layout.validate()
    return layout, per_cell_masks


def size_statistics(records: Iterable[DatasetRecord]) -> SizeStatistics:
    """Per-type mean/std (population) of bbox width and height in pixels."""

    widths: dict[str, list[int]] = {}
    heights: dict[str, list[int]] = {}
    seen = 0
    for record in records:
        seen += 1
        for cell in record.layout.cells:
            widths.setdefault(cell.cell_type.name, []).append(cell.width)
            heights.setdefault(cell.cell_type.name, []).append(cell.height)
    if seen == 0:
        raise DatasetError("size_statistics needs at least one record")
    per_type = {}
    for name in widths:
        w = np.asarray(widths[name], dtype=np.float64)
        h = np.asarray(heights[name], dtype=np.float64)
        per_type[name] = TypeSize(
            mean_width=float(w.mean()),
            std_width=float(w.std()),
            mean_height=float(h.mean()),
            std_height=float(h.std()),
            count=int(w.size),
        )
    return SizeStatistics(per_type=per_type)


def encode_mask(instance_mask: np.ndarray, class_mask: np.ndarray) -> np.ndarray:
    instance_mask = np.asarray(instance_mask)
    class_mask = np.asarray(class_mask)
    if instance_mask.max(initial=0) > 255 or class_mask.max(initial=0) > 255:
        raise DatasetError("instance and class ids must fit in one byte each")
    return (instance_mask.astype(np.uint16) << 8) | class_mask.astype(np.uint16)


def decode_mask(packed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    packed = np.asarray(packed, dtype=np.uint16)
    return (packed >> 8).astype(np.int32), (packed & 0xFF).astype(np.int32)


def image_to_array(img: Image.Image) -> np.ndarray:
    rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    return (rgb / 127.5 - 1.0).transpose(2, 0, 1)


def array_to_image(arr: np.ndarray) -> Image.Image:
    chw = np.asarray(arr, dtype=np.float32)
    hwc = np.clip((chw.transpose(1, 2, 0) + 1.0) * 127.5, 0, 255)
    return Image.fromarray(np.round(hwc).astype(np.uint8), mode="RGB")


def save_record(
    root: Path,
    split: str,
    name: str,
    image: np.ndarray,
    instance_mask: np.ndarray,
    class_mask: np.ndarray,
) -> None:
    base = Path(root) / split
    (base / "images").mkdir(parents=True, exist_ok=True)
    (base / "masks").mkdir(parents=True, exist_ok=True)
    array_to_image(image).save(base / "images" / f"{name}.png")
    packed = encode_mask(instance_mask, class_mask)
    Image.fromarray(packed).save(base / "masks" / f"{name}.png")


def _write_meta(root: Path, split: str, count: int) -> None:
    meta = {
        "format_version": 1,
        "vocabulary": [t.name for t in conic_vocabulary()],
        "count": count,
    }
    with open(Path(root) / split / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_dataset(
    root,
    split: str,
    epoch_seed: int = 0,
    types: Optional[Sequence[CellType]] = None,
) -> Iterator[DatasetRecord]:
    """Stream records of one split in a deterministic shuffled order.

    The order is a fixed permutation of the sorted file names keyed by
    ``epoch_seed``; malformed records raise with the offending path.
    """

    base = Path(root) / split
    if not base.is_dir():
        raise DatasetError(f"missing split directory: {base}")
    image_dir = base / "images"
    mask_dir = base / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"split {base} must contain images/ and masks/")
    names = sorted(p.stem for p in image_dir.glob("*.png"))
    order = np.random.default_rng(epoch_seed).permutation(len(names))
    for idx in order:
        name = names[int(idx)]
        img_path = image_dir / f"{name}.png"
        mask_path = mask_dir / f"{name}.png"
        if not mask_path.exists():
            raise DatasetError(f"{mask_path}: missing mask for image {name}")
        image = image_to_array(Image.open(img_path))
        packed = np.asarray(Image.open(mask_path))
        if packed.ndim != 2:
            raise DatasetError(f"{mask_path}: mask must be single-channel")
        instance_mask, class_mask = decode_mask(packed)
        if image.shape[1:] != instance_mask.shape:
            raise DatasetError(f"{img_path}: image/mask shape mismatch")
        try:
            layout, per_cell = extract_layout_from_mask(
                instance_mask, class_mask, types=types
            )
        except (LayoutError, DatasetError) as exc:
            raise DatasetError(f"{mask_path}: {exc}") from exc
        record = DatasetRecord(
            image=image,
            instance_mask=instance_mask,
            class_mask=class_mask,
            layout=layout,
            per_cell_masks=per_cell,
            name=name,
        )
        record.validate()
        yield record


def dataset_names(root, split: str) -> list[str]:
    base = Path(root) / split / "images"
    if not base.is_dir():
        raise DatasetError(f"missing split directory: {base.parent}")
    return sorted(p.stem for p in base.glob("*.png"))


# Converters for the two public raw formats. Both write the portable layout
# above; neither downloads anything.

#: Raw class channels of the 6-channel mask format mapped onto the nuclei
#: vocabulary: (neoplastic, inflammatory, connective, dead, epithelial) ->
#: class ids. Dead nuclei have no slot of their own and fold into connective.
PANNUKE_CHANNEL_CLASS = (2, 3, 6, 6, 2)


def convert_conic(in_dir, out_root, split: str = "train", limit: Optional[int] = None) -> int:
    """images.npy (N,H,W,3 uint8) + labels.npy (N,H,W,2 int: instance, class)."""

    in_dir = Path(in_dir)
    images = np.load(in_dir / "images.npy")
    labels = np.load(in_dir / "labels.npy")
    if images.shape[0] != labels.shape[0]:
        raise DatasetError("images.npy and labels.npy disagree on record count")
    n = images.shape[0] if limit is None else min(limit, images.shape[0])
    for i in range(n):
        image = images[i].astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0
        instance = labels[i, :, :, 0].astype(np.int32)
        classes = labels[i, :, :, 1].astype(np.int32)
        instance = _compact_ids(instance)
        save_record(out_root, split, f"{i:05d}", image, instance, classes)
    _write_meta(out_root, split, n)
    return n


def convert_pannuke(in_dir, out_root, split: str = "train", limit: Optional[int] = None) -> int:
    """images.npy (N,H,W,3) + masks.npy (N,H,W,6): five instance channels + background."""

    in_dir = Path(in_dir)
    images = np.load(in_dir / "images.npy")
    masks = np.load(in_dir / "masks.npy")
    if images.shape[0] != masks.shape[0]:
        raise DatasetError("images.npy and masks.npy disagree on record count")
    n = images.shape[0] if limit is None else min(limit, images.shape[0])
    for i in range(n):
        image = np.clip(images[i], 0, 255).astype(np.float32)
        image = image.transpose(2, 0, 1) / 127.5 - 1.0
        instance = np.zeros(masks.shape[1:3], dtype=np.int32)
        classes = np.zeros(masks.shape[1:3], dtype=np.int32)
        next_id = 1
        for ch, class_id in enumerate(PANNUKE_CHANNEL_CLASS):
            channel = masks[i, :, :, ch].astype(np.int64)
            for raw_id in np.unique(channel):
                if raw_id <= 0:
                    continue
                support = channel == raw_id
                # later channels win ties on overlapping annotations
                instance[support] = next_id
                classes[support] = class_id
                next_id += 1
        save_record(out_root, split, f"{i:05d}", image, instance, classes)
    _write_meta(out_root, split, n)
    return n


def _compact_ids(instance: np.ndarray) -> np.ndarray:
    """Relabel instance ids to 1..K so they fit the one-byte mask encoding."""

    out = np.zeros_like(instance)
    for k, raw in enumerate(i for i in np.unique(instance) if i > 0):
        out[instance == raw] = k + 1
    return out
