"""Reverse-mode differentiable operators and parameter store."""
from . import ops
from .checkpoint import load_arrays, save_arrays
from .gradcheck import adjoint_error, directional_check, grad_check
from .lstm import bilstm_layer
from .nn import (BiLSTM, Conv1d, ConvTranspose1d, DepthwiseConv1d, GlobalLayerNorm, Linear,
                 Module, PReLU)
from .tensor import NonFiniteError, Parameter, Tensor, backward, get_tape, no_grad

__all__ = [
    "ops", "load_arrays", "save_arrays", "adjoint_error", "directional_check", "grad_check", "bilstm_layer",
    "BiLSTM", "Conv1d", "ConvTranspose1d", "DepthwiseConv1d", "GlobalLayerNorm", "Linear",
    "Module", "PReLU", "NonFiniteError", "Parameter", "Tensor", "backward", "get_tape", "no_grad",
]
