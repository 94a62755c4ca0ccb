"""Evaluation suite: FID, composition prediction, augmentation balancing.

FID uses the Gaussian-fit Fréchet form with a symmetric matrix square root
(eigenvalues clipped at zero). The default feature extractor tries the
standard pretrained classification backbone; offline it falls back to a
fixed-seed random convolutional encoder, in which case values are comparable
only within a run and the report says so.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import DatasetError, DatasetRecord, connected_components
from .generator import SynthesisModel
from .inference import generate_pair
from .layout import CONIC_TYPE_NAMES
from .synth import LayoutParams, PlacementError, synthesize_layout

log = logging.getLogger(__name__)


@dataclass
class FeatureStats:
    """Gaussian fit (mean, covariance) of an image set's feature cloud."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise DatasetError("feature statistics need at least 2 samples")
        if not np.isfinite(features).all():
            raise DatasetError("non-finite feature values")
        mean = features.mean(axis=0)
        cov = np.cov(features, rowvar=False, ddof=1)
        return cls(mean=mean, cov=np.atleast_2d(cov), count=features.shape[0])


def symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """PSD square root by eigendecomposition, eigenvalues clipped at 0."""

    sym = (matrix + matrix.T) / 2
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def product_sqrtm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Square root of the (generally non-symmetric) product of two SPD
    matrices, via the similarity transform through sqrt(a)."""

    sqrt_a = symmetric_sqrt(a)
    inner = symmetric_sqrt(sqrt_a @ b @ sqrt_a)
    return sqrt_a @ np.linalg.solve(sqrt_a, inner.T).T


def frechet_distance(stats_r: FeatureStats, stats_f: FeatureStats) -> float:
    """||mu_r - mu_f||^2 + tr(S_r + S_f - 2 (S_r S_f)^{1/2})."""

    diff = stats_r.mean - stats_f.mean
    sqrt_r = symmetric_sqrt(stats_r.cov)
    inner = sqrt_r @ stats_f.cov @ sqrt_r
    eigvals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0.0, None)
    trace_sqrt = np.sqrt(eigvals).sum()
    value = float(
        diff @ diff + np.trace(stats_r.cov) + np.trace(stats_f.cov) - 2 * trace_sqrt
    )
    # squared metric; roundoff can land a hair below zero
    return max(value, 0.0)


class RandomConvFeatures(nn.Module):
    """Fixed-seed untrained conv encoder: the offline FID fallback."""

    def __init__(self, seed: int = 0, out_dim: int = 64):
        super().__init__()
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(16, 32, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, out_dim, 4, stride=2, padding=1),
        )
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.net(images).mean(dim=(2, 3))


def _inception_extractor() -> Optional[Callable]:
    try:
        from torchvision.models import Inception_V3_Weights, inception_v3

        weights = Inception_V3_Weights.IMAGENET1K_V1
        net = inception_v3(weights=weights)
        net.fc = nn.Identity()
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)

        def extract(images: torch.Tensor) -> torch.Tensor:
            resized = F.interpolate(
                images, size=(299, 299), mode="bilinear", align_corners=False
            )
            return net((resized + 1) / 2 * 2 - 1)

        return extract
    except Exception:
        return None


def default_feature_extractor(prefer_pretrained: bool = True):
    """Pretrained backbone when reachable, else the seeded random encoder."""

    if prefer_pretrained:
        extractor = _inception_extractor()
        if extractor is not None:
            return extractor
        warnings.warn(
            "pretrained FID backbone unavailable; falling back to a fixed-seed "
            "random encoder (values comparable only within this run)",
            stacklevel=2,
        )
    return RandomConvFeatures(seed=0)


def extract_features(images: Iterable[np.ndarray], extractor, batch: int = 16) -> np.ndarray:
    chunks = []
    buf: list[np.ndarray] = []

    def flush():
        if buf:
            stack = torch.as_tensor(np.stack(buf), dtype=torch.float32)
            with torch.no_grad():
                chunks.append(extractor(stack).cpu().numpy())
            buf.clear()

    for img in images:
        buf.append(np.asarray(img, dtype=np.float32))
        if len(buf) >= batch:
            flush()
    flush()
    if not chunks:
        raise DatasetError("no images to featurize")
    feats = np.concatenate(chunks, axis=0)
    if not np.isfinite(feats).all():
        raise DatasetError("feature extractor produced non-finite values")
    return feats


def fid(
    real_images: Iterable[np.ndarray],
    fake_images: Iterable[np.ndarray],
    extractor=None,
) -> float:
    if extractor is None:
        extractor = default_feature_extractor()
    stats_r = FeatureStats.from_features(extract_features(real_images, extractor))
    stats_f = FeatureStats.from_features(extract_features(fake_images, extractor))
    return frechet_distance(stats_r, stats_f)


def fid_with_spread(
    real_images: Sequence[np.ndarray],
    fake_images: Sequence[np.ndarray],
    extractor=None,
    repeats: int = 3,
    subset_fraction: float = 0.8,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean and std of FID over resampled subsets (the reported +- spread)."""

    if extractor is None:
        extractor = default_feature_extractor()
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(repeats):
        n_r = max(2, int(len(real_images) * subset_fraction))
        n_f = max(2, int(len(fake_images) * subset_fraction))
        r_idx = rng.choice(len(real_images), size=n_r, replace=False)
        f_idx = rng.choice(len(fake_images), size=n_f, replace=False)
        values.append(
            fid([real_images[i] for i in r_idx], [fake_images[i] for i in f_idx], extractor)
        )
    return float(np.mean(values)), float(np.std(values))


# Cellular composition prediction (the downstream augmentation experiment).

N_TYPES = len(CONIC_TYPE_NAMES)


def composition_vector(class_mask: np.ndarray) -> np.ndarray:
    """Per-type cell counts: 8-connected components of each class's support."""

    counts = np.zeros(N_TYPES, dtype=np.int64)
    mask = np.asarray(class_mask)
    for class_id in range(1, N_TYPES + 1):
        _, n = connected_components(mask == class_id)
        counts[class_id - 1] = n
    return counts


@dataclass
class CompositionExample:
    image: np.ndarray
    counts: np.ndarray
    synthetic: bool = False


def examples_from_records(records: Iterable[DatasetRecord]) -> list[CompositionExample]:
    return [
        CompositionExample(
            image=rec.image, counts=composition_vector(rec.class_mask)
        )
        for rec in records
    ]


class CompositionNet(nn.Module):
    """Convolutional count regressor (the ALL-style global branch)."""

    def __init__(self, n_types: int = N_TYPES, base: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, base, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(base * 2, base * 4, 4, stride=2, padding=1),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Linear(base * 4, n_types)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images).mean(dim=(2, 3)))


def train_composition_predictor(
    examples: Sequence[CompositionExample],
    epochs: int = 30,
    lr: float = 1e-3,
    batch: int = 8,
    seed: int = 0,
    device: str = "cpu",
) -> CompositionNet:
    """Huber-loss (delta = 1) regression of per-type counts from the image."""

    if not examples:
        raise DatasetError("composition training needs at least one example")
    torch.manual_seed(seed)
    net = CompositionNet().to(device)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    huber = nn.SmoothL1Loss(beta=1.0)
    rng = np.random.default_rng(seed)
    images = torch.as_tensor(
        np.stack([e.image for e in examples]), dtype=torch.float32, device=device
    )
    counts = torch.as_tensor(
        np.stack([e.counts for e in examples]), dtype=torch.float32, device=device
    )
    net.train()
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for lo in range(0, len(order), batch):
            idx = torch.as_tensor(order[lo : lo + batch], device=device)
            pred = net(images[idx])
            loss = huber(pred, counts[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()
    return net


def predict_counts(net: CompositionNet, examples: Sequence[CompositionExample]) -> np.ndarray:
    images = torch.as_tensor(np.stack([e.image for e in examples]), dtype=torch.float32)
    with torch.no_grad():
        return net(images).cpu().numpy()


@dataclass
class BalancePlan:
    """How many synthetic images to add and with what cellularity bias."""

    n_images: int = 50
    cellularities: dict = None
    grade: str = "normal"
    seed: int = 0
    image_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.cellularities is None:
            # bias toward the chronically under-represented types
            self.cellularities = {
                "neutrophil": 0.8,
                "eosinophil": 0.8,
                "epithelial": 0.3,
                "lymphocyte": 0.2,
                "plasma": 0.2,
                "connective": 0.2,
            }


def balance_with_synthetic(
    examples: Sequence[CompositionExample],
    model: SynthesisModel,
    plan: BalancePlan,
) -> tuple[list[CompositionExample], dict]:
    """Append generated records labeled with their layouts' exact counts.

    Originals are never mutated or dropped; placement failures are skipped
    with a log line. Returns the augmented list plus a before/after
    distribution table.
    """

    before = np.sum([e.counts for e in examples], axis=0)
    augmented = list(examples)
    image_size = plan.image_size or model.config.image_size
    added = 0
    attempt = 0
    while added < plan.n_images and attempt < plan.n_images * 3:
        params = LayoutParams(
            grade=plan.grade,
            cellularities=plan.cellularities,
            image_size=image_size,
            rng_seed=plan.seed * 100003 + attempt,
        )
        attempt += 1
        try:
            layout = synthesize_layout(params)
        except PlacementError as exc:
            log.warning("balance: skipping failed layout (%s)", exc)
            continue
        pair = generate_pair(model, layout, seed=params.rng_seed)
        counts = np.zeros(N_TYPES, dtype=np.int64)
        for name, value in layout.counts_by_type().items():
            counts[CONIC_TYPE_NAMES.index(name)] = value
        augmented.append(
            CompositionExample(image=pair["image"], counts=counts, synthetic=True)
        )
        added += 1
    after = np.sum([e.counts for e in augmented], axis=0)
    table = {
        "before": {n: int(c) for n, c in zip(CONIC_TYPE_NAMES, before)},
        "after": {n: int(c) for n, c in zip(CONIC_TYPE_NAMES, after)},
        "added_images": added,
    }
    return augmented, table


# Metric computations. Correlations on constant ground truth are undefined
# and reported as None, never coerced to 0.


def _rankdata(values: np.ndarray) -> np.ndarray:
    from scipy.stats import rankdata

    return rankdata(values)


def pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.std() == 0 or y.std() == 0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def spearman(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if np.std(x) == 0 or np.std(y) == 0:
        return None
    return pearson(_rankdata(x), _rankdata(y))


def r2_score(gt: np.ndarray, pred: np.ndarray) -> Optional[float]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    ss_tot = ((gt - gt.mean()) ** 2).sum()
    if ss_tot == 0:
        return None
    return float(1.0 - ((gt - pred) ** 2).sum() / ss_tot)


def auroc(labels: np.ndarray, scores: np.ndarray) -> Optional[float]:
    """Rank-based AUC (Mann-Whitney with tie correction)."""

    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _rankdata(np.asarray(scores, dtype=np.float64))
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def evaluate_predictor(
    net: CompositionNet, examples: Sequence[CompositionExample]
) -> dict:
    """Per-type Spearman/Pearson/R2 plus presence AUC-ROC (score = count)."""

    if len(examples) < 2:
        raise DatasetError("evaluation needs at least 2 examples")
    preds = predict_counts(net, examples)
    gts = np.stack([e.counts for e in examples]).astype(np.float64)
    table = {}
    for t, name in enumerate(CONIC_TYPE_NAMES):
        gt_t = gts[:, t]
        pred_t = preds[:, t]
        table[name] = {
            "spearman": spearman(gt_t, pred_t),
            "pearson": pearson(gt_t, pred_t),
            "r2": r2_score(gt_t, pred_t),
            "auroc": auroc(gt_t > 0, pred_t),
        }
    return table


def _format_cell(value) -> str:
    if value is None:
        return "undefined"
    return f"{value:.4f}"


def report_csv(table: dict, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["type", "spearman", "pearson", "r2", "auroc"])
    for name, row in table.items():
        writer.writerow(
            [name, *(_format_cell(row[k]) for k in ("spearman", "pearson", "r2", "auroc"))]
        )
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def report_markdown(table: dict, path=None) -> str:
    lines = [
        "| type | spearman | pearson | r2 | auroc |",
        "| --- | --- | --- | --- | --- |",
    ]
    for name, row in table.items():
        cells = " | ".join(_format_cell(row[k]) for k in ("spearman", "pearson", "r2", "auroc"))
        lines.append(f"| {name} | {cells} |")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
