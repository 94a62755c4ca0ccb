"""Parametric layout synthesis: glands, epithelial rings, uniform stroma.

Layouts are built from two controls, a differentiation grade and per-type
cellularities. Glands are Fourier-perturbed ellipses; the grade sets the
perturbation amplitude and how much of the ring survives. Epithelial cells
sit on the gland boundary at evenly spaced angles (with jitter), everything
else lands uniformly outside the lumens, and rejection sampling keeps all
bounding boxes disjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import SizeStatistics, TypeSize
from .layout import (
    BoundingBox,
    Cell,
    CellType,
    CellularLayout,
    LayoutError,
    compute_bbox,
    conic_vocabulary,
)

GRADES = ("normal", "low", "high")

#: Sum of Fourier mode amplitudes of the gland radius, per grade. These pin
#: the strict ordering normal < low < high of boundary irregularity.
GRADE_PERTURBATION = {"normal": 0.03, "low": 0.07, "high": 0.12}

#: Fraction of the gland ring dropped per grade (loss of boundary integrity).
GRADE_BOUNDARY_LOSS = {"normal": 0.0, "low": 0.15, "high": 0.35}

#: Fourier modes perturbing the gland radius.
GLAND_MODES = (2, 3, 4, 5)

#: Maximum cell count of a 256 px tile at 40x; other sizes scale by area.
CAPACITY_256_40 = 500

SUPPORTED_MAGNIFICATION = 40

#: Attempts per cell before placement gives up.
REJECTION_CAP = 200

#: Epithelial centers stay within this distance of a gland boundary.
BOUNDARY_TOLERANCE_PX = 4.0

# Epithelial rows are staggered this far (px) on either side of the ring so
# tight rings can hold two interleaved rows without box overlap; it must stay
# strictly under BOUNDARY_TOLERANCE_PX and at least half the max epithelial
# height (two rows are 2*offset apart, boxes touch at height 2*offset).
_RING_OFFSET_PX = 3.75


class PlacementError(LayoutError):
    """Rejection sampling ran out of attempts; carries achieved counts."""

    def __init__(self, message: str, achieved: dict, requested: dict):
        super().__init__(message)
        self.achieved = achieved
        self.requested = requested


def default_size_statistics() -> SizeStatistics:
    """Bounding-box size priors (px at 40x) used when no dataset stats exist.

    Epithelial sizes are clipped low enough that two staggered boundary rows
    fit without overlap; real dataset statistics override these wholesale.
    """

    per_type = {
        "neutrophil": TypeSize(10.0, 1.5, 10.0, 1.5, 0),
        "epithelial": TypeSize(7.0, 0.5, 7.0, 0.5, 0),
        "lymphocyte": TypeSize(8.0, 1.2, 8.0, 1.2, 0),
        "plasma": TypeSize(10.0, 1.5, 10.0, 1.5, 0),
        "eosinophil": TypeSize(11.0, 1.5, 11.0, 1.5, 0),
        "connective": TypeSize(12.0, 2.5, 8.0, 2.0, 0),
    }
    return SizeStatistics(per_type=per_type)


@dataclass
class LayoutParams:
    """Controls of parametric synthesis.

    ``cellularities`` maps type names to densities in [0, 1]; absent types
    get 0. ``cell_overlap`` is part of the contract surface but only 0 is
    supported. ``gland_count`` of None derives a count from the epithelial
    budget. ``type_shares`` is the fraction of capacity each type may claim
    at cellularity 1; defaults to uniform over the vocabulary.
    """

    grade: str = "normal"
    cellularities: Mapping[str, float] = field(default_factory=dict)
    image_size: int = 256
    magnification: int = 40
    cell_overlap: int = 0
    gland_count: Optional[int] = None
    type_shares: Optional[Mapping[str, float]] = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.grade not in GRADES:
            raise LayoutError(f"grade must be one of {GRADES}, got {self.grade!r}")
        self.cellularities = dict(self.cellularities)
        for name, value in self.cellularities.items():
            if not 0.0 <= float(value) <= 1.0:
                raise LayoutError(f"cellularities[{name!r}] = {value} outside [0, 1]")
        if self.cell_overlap != 0:
            raise LayoutError("only cell_overlap = 0 is supported")
        if self.image_size <= 0:
            raise LayoutError("image_size must be positive")
        if self.gland_count is not None and self.gland_count < 1:
            raise LayoutError("gland_count must be a positive integer")
        if self.type_shares is not None:
            self.type_shares = dict(self.type_shares)
            total = sum(self.type_shares.values())
            if abs(total - 1.0) > 1e-9:
                raise LayoutError(f"type_shares must sum to 1, got {total}")


@dataclass(frozen=True)
class GlandSpec:
    """One perturbed-ellipse gland in normalized canvas coordinates.

    The boundary is (cx + a*rho(t)*cos t, cy + b*rho(t)*sin t) with
    rho(t) = 1 + sum_m amp_m * cos(m t + phase_m); lost_arcs lists disjoint
    non-wrapping angle intervals (0 <= start < end <= 2*pi) removed from the
    ring. The lumen is the region with radial fraction below
    lumen_radius_fraction * rho.
    """

    center: tuple[float, float]
    radii: tuple[float, float]
    boundary_perturbation: float
    lumen_radius_fraction: float
    mode_amplitudes: tuple[float, ...]
    mode_phases: tuple[float, ...]
    lost_arcs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        a, b = self.radii
        if a <= 0 or b <= 0:
            raise LayoutError("gland radii must be positive")
        if not 0.0 < self.lumen_radius_fraction < 1.0:
            raise LayoutError("lumen_radius_fraction must lie in (0, 1)")
        reach = max(a, b) * (1.0 + self.boundary_perturbation)
        cx, cy = self.center
        if min(cx, cy) - reach < 0.0 or max(cx, cy) + reach > 1.0:
            raise LayoutError("gland exceeds the canvas after perturbation")

    def radial_profile(self, theta: float) -> float:
        rho = 1.0
        for m, amp, phase in zip(GLAND_MODES, self.mode_amplitudes, self.mode_phases):
            rho += amp * math.cos(m * theta + phase)
        return rho

    def boundary_point(self, theta: float, radial_scale: float = 1.0) -> tuple[float, float]:
        rho = self.radial_profile(theta) * radial_scale
        return (
            self.center[0] + self.radii[0] * rho * math.cos(theta),
            self.center[1] + self.radii[1] * rho * math.sin(theta),
        )

    def contains_in_lumen(self, x: float, y: float) -> bool:
        u = (x - self.center[0]) / self.radii[0]
        v = (y - self.center[1]) / self.radii[1]
        s = math.hypot(u, v)
        theta = math.atan2(v, u)
        return s < self.lumen_radius_fraction * self.radial_profile(theta)

    def theta_retained(self, theta: float) -> bool:
        t = theta % (2 * math.pi)
        return not any(start <= t < end for start, end in self.lost_arcs)

    def retained_thetas(self, n: int) -> np.ndarray:
        """n evenly spaced angles along the retained portion of the ring."""

        if n <= 0:
            return np.zeros(0)
        lost = sum(end - start for start, end in self.lost_arcs)
        total = 2 * math.pi - lost
        positions = (np.arange(n) + 0.5) / n * total
        # walk the retained measure, skipping over lost arcs
        arcs = sorted(self.lost_arcs)
        out = np.empty(n)
        for k, pos in enumerate(positions):
            theta = float(pos)
            for start, end in arcs:
                if theta >= start:
                    theta += end - start
            out[k] = theta % (2 * math.pi)
        return out

    def boundary_distance_px(
        self, x: float, y: float, image_size: int, samples: int = 4096
    ) -> float:
        """Distance (px) to the retained boundary, via dense arc sampling."""

        thetas = self.retained_thetas(samples)
        if thetas.size == 0:
            return math.inf
        rho = np.array([self.radial_profile(t) for t in thetas])
        bx = self.center[0] + self.radii[0] * rho * np.cos(thetas)
        by = self.center[1] + self.radii[1] * rho * np.sin(thetas)
        d2 = (bx - x) ** 2 + (by - y) ** 2
        return float(np.sqrt(d2.min())) * image_size


def estimate_capacity(image_size: int, magnification: int) -> int:
    """Maximum cell count for a tile size; area-scales the 256 px default."""

    if magnification != SUPPORTED_MAGNIFICATION:
        raise LayoutError(
            f"unsupported magnification {magnification}; only "
            f"{SUPPORTED_MAGNIFICATION}x is calibrated"
        )
    if image_size <= 0:
        raise LayoutError("image_size must be positive")
    return int(round(CAPACITY_256_40 * (image_size / 256.0) ** 2))


def _shares(params: LayoutParams, names: Sequence[str]) -> dict[str, float]:
    if params.type_shares is None:
        return {name: 1.0 / len(names) for name in names}
    unknown = set(params.type_shares) - set(names)
    if unknown:
        raise LayoutError(f"type_shares for unknown types: {sorted(unknown)}")
    return {name: float(params.type_shares.get(name, 0.0)) for name in names}


def per_type_counts(
    params: LayoutParams,
    capacity: int,
    types: Optional[Sequence[CellType]] = None,
) -> dict[str, int]:
    """count(t) = round(cellularity(t) * capacity * share(t)), total <= capacity.

    Rounding is half-up; if the rounded counts overshoot the capacity the
    largest counts are trimmed first (ties to the later vocabulary slot).
    """

    vocabulary = list(types) if types is not None else conic_vocabulary()
    names = [t.name for t in vocabulary]
    unknown = set(params.cellularities) - set(names)
    if unknown:
        raise LayoutError(f"cellularities for unknown types: {sorted(unknown)}")
    shares = _shares(params, names)
    counts = {}
    for name in names:
        c = float(params.cellularities.get(name, 0.0))
        counts[name] = int(math.floor(c * capacity * shares[name] + 0.5))
    while sum(counts.values()) > capacity:
        worst = max(names, key=lambda n: (counts[n], names.index(n)))
        counts[worst] -= 1
    return counts


def derived_gland_count(params: LayoutParams, epithelial_count: int) -> int:
    if params.gland_count is not None:
        return params.gland_count
    if epithelial_count <= 0:
        return 2
    return max(1, min(6, math.ceil(epithelial_count / 24)))


def _gland_radius_scale(count: int) -> float:
    return 0.36 / (1.0 + math.sqrt(count))


def draw_glands(
    params: LayoutParams,
    epithelial_count: Optional[int] = None,
    margin_px: float = 8.0,
) -> list[GlandSpec]:
    """Deterministically draw the gland set for the given parameters.

    Uses its own seed stream, so callers can reproduce the glands of a
    synthesized layout without running placement.
    """

    if epithelial_count is None:
        capacity = estimate_capacity(params.image_size, params.magnification)
        epithelial_count = per_type_counts(params, capacity).get("epithelial", 0)
    count = derived_gland_count(params, epithelial_count)
    rng = np.random.default_rng(np.random.SeedSequence(params.rng_seed).spawn(1)[0])
    perturbation = GRADE_PERTURBATION[params.grade]
    loss = GRADE_BOUNDARY_LOSS[params.grade]
    margin = margin_px / params.image_size

    scale = _gland_radius_scale(count)
    for shrink in range(8):
        radius_scale = scale * 0.9**shrink
        centers: list[tuple[float, float]] = []
        reaches: list[float] = []
        specs: list[GlandSpec] = []
        ok = True
        for _ in range(count):
            placed = False
            for _ in range(500):
                a = float(rng.uniform(0.85, 1.15)) * radius_scale
                b = float(rng.uniform(0.85, 1.15)) * radius_scale
                reach = max(a, b) * (1.0 + perturbation) + margin
                cx = float(rng.uniform(reach, 1.0 - reach))
                cy = float(rng.uniform(reach, 1.0 - reach))
                if all(
                    math.hypot(cx - ox, cy - oy) >= reach + oreach
                    for (ox, oy), oreach in zip(centers, reaches)
                ):
                    raw = rng.uniform(0.5, 1.0, size=len(GLAND_MODES))
                    amps = tuple(float(v) for v in raw / raw.sum() * perturbation)
                    phases = tuple(float(v) for v in rng.uniform(0, 2 * math.pi, len(GLAND_MODES)))
                    lost: tuple[tuple[float, float], ...] = ()
                    if loss > 0:
                        start = float(rng.uniform(0, 2 * math.pi))
                        end = start + loss * 2 * math.pi
                        if end <= 2 * math.pi:
                            lost = ((start, end),)
                        else:
                            lost = ((0.0, end - 2 * math.pi), (start, 2 * math.pi))
                    specs.append(
                        GlandSpec(
                            center=(cx, cy),
                            radii=(a, b),
                            boundary_perturbation=perturbation,
                            lumen_radius_fraction=float(rng.uniform(0.45, 0.6)),
                            mode_amplitudes=amps,
                            mode_phases=phases,
                            lost_arcs=lost,
                        )
                    )
                    centers.append((cx, cy))
                    reaches.append(reach)
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok:
            return specs
    raise LayoutError(f"could not fit {count} disjoint glands on the canvas")


def _boxes_intersect(box: BoundingBox, placed: list[BoundingBox]) -> bool:
    return any(box.intersects(other) for other in placed)


def synthesize_layout(
    params: LayoutParams,
    size_stats: Optional[SizeStatistics] = None,
    types: Optional[Sequence[CellType]] = None,
) -> CellularLayout:
    """Construct a layout from grade and cellularities.

    Deterministic given ``params.rng_seed``. Raises PlacementError when
    rejection sampling cannot place a cell within the attempt cap.
    """

    vocabulary = list(types) if types is not None else conic_vocabulary()
    by_name = {t.name: t for t in vocabulary}
    stats = size_stats if size_stats is not None else default_size_statistics()
    capacity = estimate_capacity(params.image_size, params.magnification)
    counts = per_type_counts(params, capacity, vocabulary)
    glands = draw_glands(params, epithelial_count=counts.get("epithelial", 0))

    seeds = np.random.SeedSequence(params.rng_seed).spawn(4)
    # seeds[0] is consumed by draw_glands
    place_rng = np.random.default_rng(seeds[1])
    size_rng = np.random.default_rng(seeds[2])
    seed_rng = np.random.default_rng(seeds[3])

    side = params.image_size
    canvas = (side, side)
    max_size = max(3, side // 4)
    cells: list[Cell] = []
    boxes: list[BoundingBox] = []
    achieved = {name: 0 for name in counts}

    def try_place(name: str, candidates) -> None:
        for attempt in range(REJECTION_CAP):
            w, h = stats.sample_size(name, size_rng, lo=3, hi=max_size)
            x, y = candidates(attempt)
            cell = Cell(
                cell_type=by_name[name],
                x=float(np.clip(x, 0.0, 1.0)),
                y=float(np.clip(y, 0.0, 1.0)),
                width=w,
                height=h,
                seed=None,
            )
            box = compute_bbox(cell, canvas)
            if not _boxes_intersect(box, boxes):
                cells.append(cell)
                boxes.append(box)
                achieved[name] += 1
                return
        raise PlacementError(
            f"failed to place {name} cell after {REJECTION_CAP} attempts "
            f"(achieved {achieved} of {counts})",
            achieved=dict(achieved),
            requested=dict(counts),
        )

    # epithelial first: ring slots are scarce, stroma can flow around them
    n_epi = counts.get("epithelial", 0)
    if n_epi > 0 and "epithelial" in by_name:
        quota = [n_epi // len(glands)] * len(glands)
        for g in range(n_epi % len(glands)):
            quota[g] += 1
        for gland, n_g in zip(glands, quota):
            if n_g == 0:
                continue
            slots = gland.retained_thetas(n_g)
            lost = sum(end - start for start, end in gland.lost_arcs)
            slot_span = (2 * math.pi - lost) / n_g
            for k, theta0 in enumerate(slots):

                def ring_candidate(attempt: int, theta0=theta0, gland=gland, k=k):
                    jitter = float(place_rng.normal(0.0, slot_span * 0.1))
                    theta = theta0 + jitter
                    if not gland.theta_retained(theta):
                        theta = theta0
                    # radial stagger sized at the actual angle so the shift
                    # stays at _RING_OFFSET_PX regardless of rho and axis ratio
                    ray = math.hypot(
                        gland.radii[0] * math.cos(theta), gland.radii[1] * math.sin(theta)
                    ) * gland.radial_profile(theta)
                    offset = _RING_OFFSET_PX / side / max(ray, 1e-6)
                    scale = 1.0 + offset if (k + attempt) % 2 == 0 else 1.0 - offset
                    return gland.boundary_point(theta, radial_scale=scale)

                try_place("epithelial", ring_candidate)

    for name in (t.name for t in vocabulary):
        if name == "epithelial":
            continue
        for _ in range(counts.get(name, 0)):

            def free_candidate(attempt: int) -> tuple[float, float]:
                for _ in range(64):
                    x = float(place_rng.uniform(0.0, 1.0))
                    y = float(place_rng.uniform(0.0, 1.0))
                    if not any(g.contains_in_lumen(x, y) for g in glands):
                        return x, y
                raise PlacementError(
                    f"canvas is dominated by lumens; cannot place {name} "
                    f"(achieved {achieved} of {counts})",
                    achieved=dict(achieved),
                    requested=dict(counts),
                )

            try_place(name, free_candidate)

    for cell in cells:
        cell.seed = int(seed_rng.integers(0, 2**32 - 1))

    layout = CellularLayout(cells=cells, types=vocabulary, canvas=canvas)
    layout.validate()
    return layout
