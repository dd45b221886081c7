"""Reverse-mode automatic differentiation over real and complex numpy arrays."""

from . import ops
from .gradcheck import grad_check, numerical_grad, relative_error
from .optim import Adam, cosine_lr
from .tensor import Tape, Tensor, backward, current_tape, no_grad

__all__ = [
    "Adam",
    "Tape",
    "Tensor",
    "backward",
    "cosine_lr",
    "current_tape",
    "grad_check",
    "no_grad",
    "numerical_grad",
    "ops",
    "relative_error",
]
