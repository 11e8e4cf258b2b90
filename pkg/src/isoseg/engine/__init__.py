"""Minimal reverse-mode autodiff engine for 3D segmentation networks."""
from .checkpoint import load_checkpoint, save_checkpoint
from .conv import conv3d, conv_transpose3d
from .functional import BatchNormState, batch_norm, dropout, max_pool3d
from .gradcheck import finite_difference_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    ContractError,
    DimensionError,
    EngineError,
    NonFiniteError,
    ParameterError,
    Tensor,
    concat_channels,
    no_grad,
    relu,
    sigmoid,
    softmax,
)

__all__ = [
    "Adam", "AdamState", "BatchNormState", "ContractError", "DimensionError", "EngineError",
    "NonFiniteError", "ParameterError", "Tensor", "adam_step", "batch_norm", "concat_channels",
    "conv3d", "conv_transpose3d", "dropout", "finite_difference_check", "load_checkpoint",
    "max_pool3d", "no_grad", "relu", "save_checkpoint", "sigmoid", "softmax",
]
