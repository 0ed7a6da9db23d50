"""Minimal dense-tensor core with reverse-mode automatic differentiation."""
from .higher import UnsupportedOrderError, diagonal_derivatives, nth_derivative
from .tensor import (
    Graph, ShapeError, Tensor, backward, bilinear_sample, clear_graph, concat, conv2d,
    constant, counters, enable_grad, grad, is_grad_enabled, matmul, maximum, minimum,
    no_grad, reachable, reset_counters, stack, tensor, where,
)
from . import functional

__all__ = [
    "Graph", "ShapeError", "Tensor", "UnsupportedOrderError", "backward", "bilinear_sample",
    "clear_graph", "concat", "constant", "conv2d", "counters", "diagonal_derivatives",
    "enable_grad", "functional", "grad", "is_grad_enabled", "matmul", "maximum", "minimum",
    "no_grad", "nth_derivative", "reachable", "reset_counters", "stack", "tensor", "where",
]
