"""Lightweight medical-style image segmentation on a small numpy autodiff engine."""
from .model import ModelConfig, ModelParams, init_params, model_forward_infer, model_forward_train, param_count
from .tensor import Tape, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "ModelParams",
    "Tape",
    "Tensor",
    "backward",
    "init_params",
    "model_forward_infer",
    "model_forward_train",
    "no_grad",
    "param_count",
]
