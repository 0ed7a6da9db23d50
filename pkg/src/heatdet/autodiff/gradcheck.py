"""Central finite-difference checks for reverse-mode gradients."""
import numpy as np

from .tensor import Tensor, grad, no_grad


def numeric_grad(fn, inputs, index, eps=1e-4):
    """Central differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]``."""
    x = inputs[index]
    out = np.zeros(x.shape)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = fn(*inputs).item()
            flat[i] = orig - eps
            minus = fn(*inputs).item()
            flat[i] = orig
            out.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return out


def relative_error(analytic, numeric, floor=1e-10):
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, inputs, eps=1e-4):
    """Largest relative error between analytic and numeric gradients of ``fn``.

    ``fn`` maps the input tensors to a scalar tensor. Inputs are mutated in
    place during the sweep and restored afterwards.
    """
    inputs = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    for x in inputs:
        x.requires_grad = True
        x.data = np.array(x.data, dtype=np.float64)
    analytic = grad(fn(*inputs), inputs)
    worst = 0.0
    for i, a in enumerate(analytic):
        worst = max(worst, relative_error(a.data, numeric_grad(fn, inputs, i, eps)))
    return worst
