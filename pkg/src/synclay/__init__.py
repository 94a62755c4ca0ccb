"""Layout-conditioned synthesis of histology image/annotation pairs."""

from .layout import (
    Cell,
    CellType,
    CellularLayout,
    LayoutError,
    compute_bbox,
    conic_vocabulary,
    layout_from_json,
    layout_hash,
    layout_to_json,
    load_layout,
    make_vocabulary,
    save_layout,
)
from .synth import LayoutParams, PlacementError, synthesize_layout
from .generator import ModelConfig, SynthesisModel
from .inference import generate_pair
from .training import TrainConfig, TrainingDiverged, train
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Cell",
    "CellType",
    "CellularLayout",
    "LayoutError",
    "LayoutParams",
    "ModelConfig",
    "PlacementError",
    "SynthesisModel",
    "TrainConfig",
    "TrainingDiverged",
    "compute_bbox",
    "conic_vocabulary",
    "generate_pair",
    "layout_from_json",
    "layout_hash",
    "layout_to_json",
    "load_checkpoint",
    "load_layout",
    "make_vocabulary",
    "save_checkpoint",
    "save_layout",
    "synthesize_layout",
    "train",
]

__version__ = "0.1.0"
