"""From-scratch CNN engine and rice leaf disease classification pipeline."""

from .errors import (
    ConfigError,
    DecodeError,
    InternalError,
    ModelCorruptionError,
    ModelFormatError,
    RiceleafError,
    ShapeError,
    TrainingError,
    UnsupportedFormatError,
    ValidationError,
)
from .nn import ConvSpec, DenseSpec, Layer, Model, PoolSpec, model_forward
from .tensor import DOUBLE, SINGLE, Tensor
from .modelio import HeadSpec, attach_head, load_model, save_model
from .train import TrainConfig, TrainHistory, accuracy, iteration_preset
from .data import AugmentSpec, DatasetManifest, ManifestRecord, split_dataset

__version__ = "0.1.0"
