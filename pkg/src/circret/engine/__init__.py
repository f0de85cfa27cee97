"""Minimal reverse-mode autodiff on numpy arrays."""

from . import ops
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .gradcheck import gradcheck, numeric_grad, relative_error
from .nn import LayerNorm, Linear, Module, UnknownGroup
from .optim import AdamW, OptimizerState, ParamGroup, StaleState, adamw_step, lr_schedule
from .tensor import NonFiniteValue, NonScalarLoss, Parameter, ShapeMismatch, Tensor

__all__ = [
    "ops",
    "Tensor",
    "Parameter",
    "ShapeMismatch",
    "NonScalarLoss",
    "NonFiniteValue",
    "Module",
    "Linear",
    "LayerNorm",
    "UnknownGroup",
    "AdamW",
    "ParamGroup",
    "OptimizerState",
    "StaleState",
    "adamw_step",
    "lr_schedule",
    "save_tensors",
    "load_tensors",
    "CheckpointError",
    "gradcheck",
    "numeric_grad",
    "relative_error",
]
