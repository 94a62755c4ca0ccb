"""Cellular layout data model: typed cells on a normalized canvas.

A layout is the sole conditioning input of the synthesis pipeline. Cells are
addressed by insertion order (index k); every per-cell array downstream
(masks, boxes, embeddings) indexes by that order. Locations use a top-left
origin with y pointing down, normalized to [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

LAYOUT_SCHEMA_VERSION = 1

#: Default nuclei vocabulary for colon tiles; class ids in masks are
#: vocabulary index + 1 (0 is background).
CONIC_TYPE_NAMES = (
    "neutrophil",
    "epithelial",
    "lymphocyte",
    "plasma",
    "eosinophil",
    "connective",
)

NOISE_DIM = 4

#: Merge tolerance for coincident cell locations when triangulating.
DUPLICATE_LOCATION_EPS = 1e-9


class LayoutError(ValueError):
    """A layout, cell, or box violates its invariants."""


class VocabularyError(LayoutError):
    """A cell references a type that is not in the layout vocabulary."""


@dataclass(frozen=True)
class CellType:
    id: int
    name: str


def conic_vocabulary() -> list[CellType]:
    return [CellType(i, name) for i, name in enumerate(CONIC_TYPE_NAMES)]


def make_vocabulary(names: Sequence[str]) -> list[CellType]:
    if len(names) < 1:
        raise LayoutError("vocabulary must contain at least one type")
    if len(set(names)) != len(names):
        raise LayoutError("vocabulary names must be unique")
    return [CellType(i, str(name)) for i, name in enumerate(names)]


@dataclass
class Cell:
    """One typed cell: location normalized to [0,1], size in pixels.

    ``noise`` is the 4-vector appearance code; it may be deferred (None) and
    later resolved from ``seed`` or a run RNG.
    """

    cell_type: CellType
    x: float
    y: float
    width: int
    height: int
    noise: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise LayoutError(
                f"cell location ({self.x}, {self.y}) outside [0, 1]"
            )
        if self.width < 1 or self.height < 1:
            raise LayoutError("cell size must be at least 1x1 px")
        if self.noise is not None:
            self.noise = np.asarray(self.noise, dtype=np.float64)
            if self.noise.shape != (NOISE_DIM,):
                raise LayoutError(
                    f"noise must have length {NOISE_DIM}, got {self.noise.shape}"
                )

    @property
    def location(self) -> tuple[float, float]:
        return (self.x, self.y)

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def resolved_noise(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Noise vector: explicit > derived from seed > drawn from rng."""
        if self.noise is not None:
            return self.noise
        if self.seed is not None:
            return sample_noise(self.seed)
        if rng is None:
            raise LayoutError("cell has no noise, no seed, and no RNG was given")
        return rng.standard_normal(NOISE_DIM)


@dataclass
class CellularLayout:
    cells: list[Cell] = field(default_factory=list)
    types: list[CellType] = field(default_factory=conic_vocabulary)
    canvas: tuple[int, int] = (256, 256)

    def __post_init__(self) -> None:
        self.canvas = (int(self.canvas[0]), int(self.canvas[1]))
        if self.canvas[0] < 1 or self.canvas[1] < 1:
            raise LayoutError("canvas must be at least 1x1")

    def validate(self) -> None:
        names = {t.name for t in self.types}
        if len(names) != len(self.types):
            raise LayoutError("vocabulary names must be unique")
        if [t.id for t in self.types] != list(range(len(self.types))):
            raise LayoutError("vocabulary ids must be contiguous from 0")
        for k, cell in enumerate(self.cells):
            if cell.cell_type.name not in names:
                raise VocabularyError(
                    f"cells[{k}].type {cell.cell_type.name!r} not in vocabulary"
                )
            if cell.width > self.canvas[0] or cell.height > self.canvas[1]:
                raise LayoutError(
                    f"cells[{k}] size {cell.size} exceeds canvas {self.canvas}"
                )

    def type_by_name(self, name: str) -> CellType:
        for t in self.types:
            if t.name == name:
                return t
        raise VocabularyError(f"unknown cell type {name!r}")

    def counts_by_type(self) -> dict[str, int]:
        counts = {t.name: 0 for t in self.types}
        for cell in self.cells:
            counts[cell.cell_type.name] += 1
        return counts

    def cell_noise(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """(n, 4) noise matrix, resolving deferred noise from seeds or rng."""
        if not self.cells:
            return np.zeros((0, NOISE_DIM))
        return np.stack([c.resolved_noise(rng) for c in self.cells])


@dataclass(frozen=True)
class BoundingBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise LayoutError(f"degenerate bounding box {self.as_tuple()}")
        if self.x0 < 0 or self.y0 < 0:
            raise LayoutError(f"bounding box {self.as_tuple()} has negative corner")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def intersects(self, other: "BoundingBox") -> bool:
        return (
            self.x0 < other.x1
            and other.x0 < self.x1
            and self.y0 < other.y1
            and other.y0 < self.y1
        )

    def contains_within(self, canvas: tuple[int, int]) -> bool:
        return self.x1 <= canvas[0] and self.y1 <= canvas[1]


@dataclass
class CellularGraph:
    """Planar proximity graph over cell indices.

    Edges are unordered (i < j) and unique; weights are Euclidean distances
    between normalized locations.
    """

    nodes: list[int]
    edges: list[tuple[int, int, float]]

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.nodes]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def edge_set(self) -> set[tuple[int, int]]:
        return {(i, j) for i, j, _ in self.edges}


def sample_noise(rng_seed: int) -> np.ndarray:
    """Deterministic 4-vector of standard-normal appearance noise."""
    return np.random.default_rng(rng_seed).standard_normal(NOISE_DIM)


def build_cell_vector(cell: Cell, vocabulary: Sequence[CellType]) -> np.ndarray:
    """[one-hot(type) | x, y | noise] of length |vocabulary| + 6."""
    index = None
    for i, t in enumerate(vocabulary):
        if t.name == cell.cell_type.name:
            index = i
            break
    if index is None:
        raise VocabularyError(
            f"cell type {cell.cell_type.name!r} not in vocabulary "
            f"{[t.name for t in vocabulary]}"
        )
    if cell.noise is None and cell.seed is None:
        raise LayoutError("cell noise must be resolved before vectorization")
    one_hot = np.zeros(len(vocabulary))
    one_hot[index] = 1.0
    return np.concatenate([one_hot, [cell.x, cell.y], cell.resolved_noise()])


def layout_cell_vectors(
    layout: CellularLayout, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """(n, |types| + 6) matrix of cell vectors in layout order."""
    dim = len(layout.types) + 2 + NOISE_DIM
    if not layout.cells:
        return np.zeros((0, dim))
    vectors = []
    for cell in layout.cells:
        noise = cell.resolved_noise(rng)
        one_hot = np.zeros(len(layout.types))
        one_hot[layout.type_by_name(cell.cell_type.name).id] = 1.0
        vectors.append(np.concatenate([one_hot, [cell.x, cell.y], noise]))
    return np.stack(vectors)


def compute_bbox(cell: Cell, canvas: tuple[int, int]) -> BoundingBox:
    """Pixel box centered at (x*W, y*H), clipped to the canvas.

    Clipping preserves the centroid semantics of the location; the box is
    never shifted to fit. The tiny epsilon makes half-up rounding robust to
    one-ulp noise in the centroid product.
    """
    w_canvas, h_canvas = int(canvas[0]), int(canvas[1])
    if cell.width > w_canvas or cell.height > h_canvas:
        raise LayoutError(
            f"cell size {cell.size} exceeds canvas ({w_canvas}, {h_canvas})"
        )
    cx = cell.x * w_canvas
    cy = cell.y * h_canvas
    x0 = int(math.floor(cx - cell.width / 2 + 0.5 + 1e-9))
    y0 = int(math.floor(cy - cell.height / 2 + 0.5 + 1e-9))
    x1 = x0 + cell.width
    y1 = y0 + cell.height
    x0 = min(max(x0, 0), w_canvas - 1)
    y0 = min(max(y0, 0), h_canvas - 1)
    x1 = min(max(x1, x0 + 1), w_canvas)
    y1 = min(max(y1, y0 + 1), h_canvas)
    return BoundingBox(x0, y0, x1, y1)


def layout_bboxes(layout: CellularLayout) -> list[BoundingBox]:
    return [compute_bbox(cell, layout.canvas) for cell in layout.cells]


def _merge_duplicate_locations(
    points: np.ndarray, eps: float
) -> tuple[np.ndarray, list[int], list[list[int]]]:
    """Group coincident points; returns (unique points, rep index per group,
    member lists per group)."""
    reps: list[int] = []
    groups: list[list[int]] = []
    for k in range(len(points)):
        placed = False
        for g, rep in enumerate(reps):
            if np.linalg.norm(points[k] - points[rep]) <= eps:
                groups[g].append(k)
                placed = True
                break
        if not placed:
            reps.append(k)
            groups.append([k])
    return points[reps], reps, groups


def _chain_edges(points: np.ndarray) -> list[tuple[int, int]]:
    """Nearest-neighbor chain along the principal axis (collinear fallback)."""
    if len(points) < 2:
        return []
    centered = points - points.mean(axis=0)
    # Principal direction via the larger-variance axis of the 2x2 scatter.
    _, vecs = np.linalg.eigh(centered.T @ centered)
    order = np.argsort(centered @ vecs[:, -1], kind="stable")
    return [(int(order[i]), int(order[i + 1])) for i in range(len(order) - 1)]


def delaunay_graph(layout: CellularLayout) -> CellularGraph:
    """Delaunay triangulation of cell locations, edges weighted by distance.

    Coincident locations are merged for triangulation and re-attached to
    their representative; collinear inputs fall back to a nearest-neighbor
    chain so the graph stays connected.
    """
    n = len(layout.cells)
    if n == 0:
        raise LayoutError("cannot triangulate an empty layout")
    points = np.array([[c.x, c.y] for c in layout.cells], dtype=np.float64)
    unique, reps, groups = _merge_duplicate_locations(points, DUPLICATE_LOCATION_EPS)

    rep_edges: set[tuple[int, int]] = set()
    if len(unique) >= 3:
        try:
            tri = Delaunay(unique)
            for simplex in tri.simplices:
                for a in range(3):
                    i, j = sorted((int(simplex[a]), int(simplex[(a + 1) % 3])))
                    rep_edges.add((i, j))
        except QhullError:
            rep_edges = set(_chain_edges(unique))
    elif len(unique) == 2:
        rep_edges = {(0, 1)}

    edges: list[tuple[int, int, float]] = []
    seen: set[tuple[int, int]] = set()

    def add(i: int, j: int) -> None:
        i, j = (i, j) if i < j else (j, i)
        if i == j or (i, j) in seen:
            return
        seen.add((i, j))
        edges.append((i, j, float(np.linalg.norm(points[i] - points[j]))))

    # expand merged groups: every member inherits the representative's
    # neighborhood, and coincident members are neighbors of each other
    for u, v in rep_edges:
        for i in groups[u]:
            for j in groups[v]:
                add(i, j)
    for members in groups:
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                add(members[a], members[b])

    return CellularGraph(nodes=list(range(n)), edges=edges)


# ---------------------------------------------------------------------------
# JSON schema (versioned wire/file format)
# ---------------------------------------------------------------------------


def layout_to_json(layout: CellularLayout) -> dict:
    cells = []
    for cell in layout.cells:
        entry: dict = {
            "type": cell.cell_type.name,
            "x": cell.x,
            "y": cell.y,
            "w": cell.width,
            "h": cell.height,
        }
        if cell.seed is not None:
            entry["seed"] = int(cell.seed)
        if cell.noise is not None:
            entry["noise"] = [float(v) for v in cell.noise]
        cells.append(entry)
    return {
        "version": LAYOUT_SCHEMA_VERSION,
        "canvas": {"width": layout.canvas[0], "height": layout.canvas[1]},
        "types": [t.name for t in layout.types],
        "cells": cells,
    }


def _expect(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise LayoutError(f"{path}: {message}")


def layout_from_json(obj: object) -> CellularLayout:
    """Parse and validate the layout wire format; errors carry field paths."""
    _expect(isinstance(obj, dict), "$", "layout must be a JSON object")
    assert isinstance(obj, dict)
    _expect(obj.get("version") == LAYOUT_SCHEMA_VERSION, "version",
            f"unsupported version {obj.get('version')!r}")
    _expect("canvas" in obj, "canvas", "field is required")
    canvas_obj = obj["canvas"]
    _expect(isinstance(canvas_obj, dict), "canvas", "must be an object")
    try:
        canvas = (int(canvas_obj["width"]), int(canvas_obj["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise LayoutError(f"canvas: invalid width/height ({exc})") from exc
    _expect(canvas[0] >= 1 and canvas[1] >= 1, "canvas", "must be at least 1x1")

    type_names = obj.get("types")
    _expect(isinstance(type_names, list) and len(type_names) >= 1,
            "types", "must be a non-empty list of names")
    types = make_vocabulary(type_names)  # type: ignore[arg-type]
    by_name = {t.name: t for t in types}

    raw_cells = obj.get("cells", [])
    _expect(isinstance(raw_cells, list), "cells", "must be a list")
    cells: list[Cell] = []
    for k, raw in enumerate(raw_cells):
        path = f"cells[{k}]"
        _expect(isinstance(raw, dict), path, "must be an object")
        name = raw.get("type")
        if name not in by_name:
            raise VocabularyError(f"{path}.type: unknown type {name!r}")

        def field(key: str, cast):
            _expect(key in raw, f"{path}.{key}", "field is required")
            try:
                return cast(raw[key])
            except (TypeError, ValueError) as exc:
                raise LayoutError(f"{path}.{key}: invalid value ({exc})") from exc

        x, y = field("x", float), field("y", float)
        w, h = field("w", int), field("h", int)
        _expect(0.0 <= x <= 1.0, f"{path}.x", f"{x} outside [0, 1]")
        _expect(0.0 <= y <= 1.0, f"{path}.y", f"{y} outside [0, 1]")
        _expect(1 <= w <= canvas[0], f"{path}.w",
                f"{w} outside [1, {canvas[0]}]")
        _expect(1 <= h <= canvas[1], f"{path}.h",
                f"{h} outside [1, {canvas[1]}]")
        seed = raw.get("seed")
        if seed is not None:
            _expect(isinstance(seed, int), f"{path}.seed", "must be an integer")
        noise = raw.get("noise")
        if noise is not None:
            _expect(
                isinstance(noise, list) and len(noise) == NOISE_DIM,
                f"{path}.noise", f"must be a list of {NOISE_DIM} numbers",
            )
        try:
            cells.append(Cell(by_name[name], x, y, w, h, seed=seed, noise=noise))
        except LayoutError as exc:
            raise LayoutError(f"{path}: {exc}") from exc

    layout = CellularLayout(cells=cells, types=types, canvas=canvas)
    layout.validate()
    return layout


def layout_to_json_str(layout: CellularLayout) -> str:
    return json.dumps(layout_to_json(layout), indent=2)


def canonical_layout_json(layout: CellularLayout) -> str:
    """Key-sorted, whitespace-free serialization used for content hashing."""
    return json.dumps(layout_to_json(layout), sort_keys=True,
                      separators=(",", ":"))


def layout_hash(layout: CellularLayout) -> str:
    return hashlib.sha256(canonical_layout_json(layout).encode()).hexdigest()


def save_layout(layout: CellularLayout, path) -> None:
    with open(path, "w") as fh:
        fh.write(layout_to_json_str(layout))


def load_layout(path) -> CellularLayout:
    with open(path) as fh:
        return layout_from_json(json.load(fh))
