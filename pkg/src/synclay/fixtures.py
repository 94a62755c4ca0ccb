"""Synthetic fixture data: rasterized box layouts and toy tile renders.

Everything here exists to exercise the pipeline without real data: layouts
become axis-aligned filled rectangles (so centroids and sizes are exact),
and images are flat-tinted rectangles over a stained background. Cell
locations produced here follow the pixel-index-mean convention used by mask
extraction, x = (x0 + (w - 1) / 2) / W, so extract -> rasterize -> extract
is a fixed point.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import save_record
from .layout import (
    Cell,
    CellType,
    CellularLayout,
    LayoutError,
    compute_bbox,
    conic_vocabulary,
)

#: Muted per-type tints for toy renders, indexed by class id - 1. These are
#: a visualization aid only; the mask PNG palette contract lives with the
#: segmentation mask IO.
_TINTS = np.array(
    [
        [200, 80, 80],
        [90, 170, 90],
        [200, 200, 90],
        [90, 90, 200],
        [190, 90, 190],
        [90, 190, 190],
    ],
    dtype=np.float32,
)

_BACKGROUND = np.array([235, 205, 220], dtype=np.float32)


def snapped_location(x0: int, y0: int, w: int, h: int, canvas: tuple[int, int]) -> tuple[float, float]:
    """Location whose bbox computation lands exactly on (x0, y0)."""

    return ((x0 + (w - 1) / 2) / canvas[0], (y0 + (h - 1) / 2) / canvas[1])


def random_box_layout(
    rng: np.random.Generator,
    n_cells: int,
    canvas: tuple[int, int] = (256, 256),
    size_range: tuple[int, int] = (4, 20),
    types: Optional[Sequence[CellType]] = None,
    type_weights: Optional[Sequence[float]] = None,
    max_attempts: int = 500,
) -> CellularLayout:
    """Random layout of non-overlapping axis-aligned boxes, snapped locations."""

    vocabulary = list(types) if types is not None else conic_vocabulary()
    weights = None
    if type_weights is not None:
        weights = np.asarray(type_weights, dtype=np.float64)
        weights = weights / weights.sum()
    cells: list[Cell] = []
    occupied: list[tuple[int, int, int, int]] = []
    for _ in range(n_cells):
        for attempt in range(max_attempts):
            w = int(rng.integers(size_range[0], size_range[1] + 1))
            h = int(rng.integers(size_range[0], size_range[1] + 1))
            x0 = int(rng.integers(0, canvas[0] - w + 1))
            y0 = int(rng.integers(0, canvas[1] - h + 1))
            if all(
                x0 + w <= ox or ox + ow <= x0 or y0 + h <= oy or oy + oh <= y0
                for ox, oy, ow, oh in occupied
            ):
                break
        else:
            raise LayoutError(f"could not pack {n_cells} boxes on {canvas}")
        tid = int(rng.choice(len(vocabulary), p=weights))
        x, y = snapped_location(x0, y0, w, h, canvas)
        cells.append(
            Cell(
                cell_type=vocabulary[tid],
                x=x,
                y=y,
                width=w,
                height=h,
                seed=int(rng.integers(0, 2**32 - 1)),
            )
        )
        occupied.append((x0, y0, w, h))
    layout = CellularLayout(cells=cells, types=vocabulary, canvas=canvas)
    layout.validate()
    return layout


def rasterize_layout(layout: CellularLayout) -> tuple[np.ndarray, np.ndarray]:
    """Fill each cell's bbox: instance id = index + 1, class id = type id + 1."""

    w_canvas, h_canvas = layout.canvas
    instance = np.zeros((h_canvas, w_canvas), dtype=np.int32)
    classes = np.zeros((h_canvas, w_canvas), dtype=np.int32)
    for k, cell in enumerate(layout.cells):
        box = compute_bbox(cell, layout.canvas)
        instance[box.y0 : box.y1, box.x0 : box.x1] = k + 1
        classes[box.y0 : box.y1, box.x0 : box.x1] = cell.cell_type.id + 1
    return instance, classes


def render_image(
    layout: CellularLayout,
    rng: Optional[np.random.Generator] = None,
    noise_scale: float = 0.02,
) -> np.ndarray:
    """Toy 3xHxW tile in [-1, 1]: tinted rectangles on a stained background."""

    w_canvas, h_canvas = layout.canvas
    img = np.tile(_BACKGROUND[:, None, None], (1, h_canvas, w_canvas))
    for cell in layout.cells:
        box = compute_bbox(cell, layout.canvas)
        tint = _TINTS[cell.cell_type.id % len(_TINTS)]
        img[:, box.y0 : box.y1, box.x0 : box.x1] = tint[:, None, None]
    img = img / 127.5 - 1.0
    if rng is not None and noise_scale > 0:
        img = img + rng.normal(0.0, noise_scale, img.shape)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def make_fixture_dataset(
    root,
    split: str,
    n_records: int,
    n_cells: int | tuple[int, int] = (3, 8),
    image_size: int = 256,
    seed: int = 0,
    type_weights: Optional[Sequence[float]] = None,
    noise_scale: float = 0.02,
) -> list[str]:
    """Write a directory of synthetic records; returns their names."""

    rng = np.random.default_rng(seed)
    canvas = (image_size, image_size)
    lo, hi = (n_cells, n_cells) if isinstance(n_cells, int) else n_cells
    size_hi = max(4, min(20, image_size // 4))
    names = []
    for i in range(n_records):
        count = int(rng.integers(lo, hi + 1))
        layout = random_box_layout(
            rng,
            count,
            canvas=canvas,
            size_range=(4, size_hi),
            type_weights=type_weights,
        )
        instance, classes = rasterize_layout(layout)
        image = render_image(layout, rng, noise_scale=noise_scale)
        name = f"{i:05d}"
        save_record(Path(root), split, name, image, instance, classes)
        names.append(name)
    return names
