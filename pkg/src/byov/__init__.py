"""Two-view masked frame-embedding modeling: selective token merging,
self-view and cross-view masked reconstruction training, and a temporal
alignment / phase understanding evaluation harness."""

__version__ = "0.1.0"

from .errors import (
    ByovError,
    ContractError,
    DataError,
    DegenerateAttentionError,
    FormatError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .model import ArchConfig, ModelParams, load_checkpoint, save_checkpoint
from .objectives import LossBreakdown, Ratios
from .trainer import Flags, OptimConfig, TrainConfig, train

__all__ = [
    "ByovError", "ContractError", "DataError", "DegenerateAttentionError",
    "FormatError", "NumericError", "ShapeError", "ValidationError",
    "ArchConfig", "ModelParams", "load_checkpoint", "save_checkpoint",
    "LossBreakdown", "Ratios", "Flags", "OptimConfig", "TrainConfig", "train",
    "__version__",
]
