"""Bilinear sampling kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when it imports; otherwise the numpy
implementation is used. :func:`use_backend` switches explicitly, which the
benchmarks and the equivalence tests rely on.
"""
import numpy as np

from . import _fallback

try:
    from . import _bilinear as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = _BACKENDS.get("compiled", _fallback)


def available_backends():
    return sorted(_BACKENDS)


def backend():
    """Name of the backend currently in use."""
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def use_backend(name):
    """Select ``"python"`` or ``"compiled"``; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {available_backends()}")
    previous = backend()
    _active = _BACKENDS[name]
    return previous


def _prep(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def bilinear_forward(value, x, y):
    """Sample ``value`` (N, C, H, W) at points ``x``, ``y`` (N, P) -> (N, C, P)."""
    return _active.bilinear_forward(_prep(value), _prep(x), _prep(y))


def bilinear_backward(grad_out, value, x, y):
    """Adjoint of :func:`bilinear_forward`: returns (grad_value, grad_x, grad_y)."""
    return _active.bilinear_backward(_prep(grad_out), _prep(value), _prep(x), _prep(y))
