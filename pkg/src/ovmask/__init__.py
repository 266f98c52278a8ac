"""Dual-encoder image-text pretraining with masked feature reconstruction
and open-vocabulary region scoring, on a from-scratch numpy autodiff core."""

__version__ = "0.1.0"

from . import autodiff
from .encoders import DualEncoderModel, ModelConfig, TextConfig, ViTConfig
from .training import ExperimentConfig

__all__ = [
    "autodiff",
    "DualEncoderModel",
    "ModelConfig",
    "TextConfig",
    "ViTConfig",
    "ExperimentConfig",
    "__version__",
]
