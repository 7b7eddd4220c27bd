"""Minimal float64 tensor engine: autodiff tape, conv/attention/norm primitives, Adam."""
from .kernels import BACKEND
from .nn import Module, Parameter
from .optim import Adam, AdamState, adam_step
from .serialize import load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .tensor import (
    Tape,
    Tensor,
    attention,
    backward,
    concat,
    conv1d,
    conv2d,
    layer_norm,
    linear,
    mse,
    set_debug,
)

__all__ = [
    "BACKEND",
    "Adam",
    "AdamState",
    "Module",
    "Parameter",
    "Tape",
    "Tensor",
    "adam_step",
    "attention",
    "backward",
    "concat",
    "conv1d",
    "conv2d",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "load_tensor",
    "mse",
    "save_checkpoint",
    "save_tensor",
    "set_debug",
]
