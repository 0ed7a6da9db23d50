"""Diagonal higher-order derivatives by repeated reverse passes."""
import numpy as np

from .tensor import ShapeError, Tensor, grad

MAX_ORDER = 3


class UnsupportedOrderError(ValueError):
    pass


def _element_masks(shape):
    n = int(np.prod(shape))
    for i in range(n):
        m = np.zeros(n)
        m[i] = 1.0
        yield m.reshape(shape)


def diagonal_derivatives(output, wrt, order, groups=None, create_graph=True):
    """Return ``[d1, ..., d_order]``, the elementwise derivatives of ``output``.

    ``d_k[e]`` is the k-th derivative of ``output`` with respect to element
    ``e`` of ``wrt`` with all other elements held fixed.

    ``groups`` is an optional iterable of 0/1 masks partitioning ``wrt``.
    Elements sharing a mask are probed in one pass, which is exact only when
    every mixed partial between two elements of the same group vanishes
    identically (for instance elements at different locations of a
    per-location head). The default probes one element at a time.
    """
    if not 1 <= order <= MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {order} not in 1..{MAX_ORDER}")
    if output.size != 1:
        raise ShapeError(f"derivative of non-scalar output with shape {output.shape}")
    first = grad(output, wrt, create_graph=True)
    if order == 1:
        return [first]
    masks = _element_masks(wrt.shape) if groups is None else groups
    acc = [None] * (order - 1)
    for m in masks:
        m = Tensor(np.broadcast_to(np.asarray(m, dtype=np.float64), wrt.shape))
        d = first
        for k in range(order - 1):
            keep = create_graph or k < order - 2
            d = grad((d * m).sum(), wrt, create_graph=keep)
            term = d * m
            acc[k] = term if acc[k] is None else acc[k] + term
    zeros = Tensor(np.zeros(wrt.shape))
    return [first] + [a if a is not None else zeros for a in acc]


def nth_derivative(output, wrt, order, groups=None):
    """Elementwise ``order``-th derivative of a scalar ``output`` w.r.t. ``wrt``."""
    return diagonal_derivatives(output, wrt, order, groups=groups)[-1]
