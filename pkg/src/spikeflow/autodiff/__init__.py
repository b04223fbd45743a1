from .tensor import ShapeError, Tensor, check_finite, grad_enabled, no_grad, set_strict_finite
from . import ops

__all__ = [
    "ShapeError", "Tensor", "check_finite", "grad_enabled", "no_grad",
    "ops", "set_strict_finite",
]
