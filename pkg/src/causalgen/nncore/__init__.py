"""Differentiable numerics: tape autodiff, layers, Adam, kernel backends.

The dense/GRU hot paths run through a compiled Cython extension when it is
available and fall back to numpy otherwise; see :mod:`causalgen.nncore.backend`.
"""

from .autodiff import (
    NonFiniteLossError,
    Tensor,
    finite_diff_gradient,
    gaussian_log_density,
    gradient,
    value_and_grad,
)
from .backend import active_backend, available_backends, use_backend
from .layers import coupling_forward, coupling_inverse, dense, gru_step
from .optim import AdamConfig, OptimizerState, adam_step
from .params import GradStore, ParamStore

__all__ = [
    "AdamConfig",
    "GradStore",
    "NonFiniteLossError",
    "OptimizerState",
    "ParamStore",
    "Tensor",
    "active_backend",
    "adam_step",
    "available_backends",
    "coupling_forward",
    "coupling_inverse",
    "dense",
    "finite_diff_gradient",
    "gaussian_log_density",
    "gradient",
    "gru_step",
    "use_backend",
    "value_and_grad",
]
