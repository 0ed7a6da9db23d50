"""Dense float64 tensors with reverse-mode differentiation.

Every backward rule is written with the same differentiable operations as
the forward pass, so ``grad(..., create_graph=True)`` returns tensors that
are themselves part of a graph and can be differentiated again. That is
what makes second and third derivatives available to the heatmap engine.

Broadcasting is deliberately narrow: operands must have identical shapes,
or one side must be a Python number or a 0-d tensor. Anything wider goes
through an explicit :meth:`Tensor.expand`.
"""
from contextlib import contextmanager

import numpy as np

from .. import _kernels

__all__ = [
    "Tensor", "ShapeError", "Graph", "tensor", "constant", "no_grad", "enable_grad",
    "is_grad_enabled", "grad", "backward", "concat", "stack", "where", "maximum",
    "minimum", "conv2d", "bilinear_sample", "counters", "reset_counters", "clear_graph",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


_state = {"grad_enabled": True}

# Instrumentation: every call into the differentiation machinery is counted.
counters = {"grad": 0}


def reset_counters():
    for key in counters:
        counters[key] = 0


def is_grad_enabled():
    return _state["grad_enabled"]


@contextmanager
def _grad_mode(enabled):
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = enabled
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def no_grad():
    """Context in which operations are evaluated without recording a graph."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class _Node:
    __slots__ = ("op", "parents", "backward")

    def __init__(self, op, parents, backward):
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    """An n-dimensional float64 array that may sit in a computation graph."""

    __slots__ = ("data", "requires_grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def op(self):
        return self._node.op if self._node is not None else None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", op={self.op}" if self._node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return self.shape[0]

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -other if not isinstance(other, Tensor) else _neg(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return _mul(self, other ** -1.0)
        return _mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return _mul(self ** -1.0, other)

    def __neg__(self):
        return _neg(self)

    def __pow__(self, exponent):
        return _pow(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    # -- methods mirroring the free functions ----------------------------
    def sum(self, axis=None, keepdims=False):
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        axes = _norm_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return _sum(self, axis, keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return _transpose(self, axes)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return _transpose(self, tuple(axes))

    def expand(self, shape):
        return _expand(self, tuple(shape))

    def flip(self, axes):
        return _flip(self, axes)

    def relu(self):
        return _relu(self)

    def exp(self):
        return _exp(self)

    def log(self):
        return _log(self)

    def tanh(self):
        return _tanh(self)

    def sigmoid(self):
        return _sigmoid(self)

    def abs(self):
        return _abs(self)

    def clip(self, lo, hi):
        return _clip(self, lo, hi)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data):
    return data if isinstance(data, Tensor) else Tensor(data)


def _record(data, op, parents, backward):
    out = Tensor(data)
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(op, parents, backward)
    return out


def _shape_error(op, a, b):
    return ShapeError(f"{op}: shape mismatch {tuple(a)} vs {tuple(b)}")


def _pair(a, b, op):
    """Coerce ``b`` to a tensor compatible with ``a`` (exact or 0-d broadcast)."""
    if not isinstance(b, Tensor):
        b = Tensor(b)
    if a.shape == b.shape:
        return a, b
    if b.ndim == 0:
        return a, _expand(b, a.shape)
    if a.ndim == 0:
        return _expand(a, b.shape), b
    raise _shape_error(op, a.shape, b.shape)


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _add(a, b):
    if _is_scalar(b):
        c = float(b)
        return _record(a.data + c, "add_scalar", (a,), lambda g: (g,))
    a, b = _pair(a, b, "add")
    return _record(a.data + b.data, "add", (a, b), lambda g: (g, g))


def _neg(a):
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def _mul(a, b):
    if _is_scalar(b):
        c = float(b)
        return _record(a.data * c, "scale", (a,), lambda g: (g * c,))
    a, b = _pair(a, b, "mul")
    return _record(a.data * b.data, "mul", (a, b), lambda g: (g * b, g * a))


def _pow(a, exponent):
    if isinstance(exponent, Tensor):
        raise TypeError("pow: exponent must be a constant number")
    p = float(exponent)
    if p == 1.0:
        return a
    if p == 0.0:
        return Tensor(np.ones_like(a.data))

    def backward(g):
        return (g * (a ** (p - 1.0)) * p,)

    return _record(np.power(a.data, p), f"pow{p:g}", (a,), backward)


def softmax(a, axis=-1):
    """Normalized exponentials along ``axis``; one node instead of five."""
    a = constant(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gy = g * out
        return (gy - out * _expand(gy.sum(axis=axis, keepdims=True), out.shape),)

    out = _record(data, "softmax", (a,), backward)
    return out


def log_softmax(a, axis=-1):
    a = constant(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - out.exp() * _expand(g.sum(axis=axis, keepdims=True), out.shape),)

    out = _record(data, "log_softmax", (a,), backward)
    return out


def _mask(cond):
    return Tensor(np.asarray(cond, dtype=np.float64))


def _relu(a):
    # derivative at exactly 0 is 0
    m = _mask(a.data > 0)
    return _record(a.data * m.data, "relu", (a,), lambda g: (g * m,))


def _abs(a):
    s = _mask(np.sign(a.data))
    return _record(np.abs(a.data), "abs", (a,), lambda g: (g * s,))


def _clip(a, lo, hi):
    m = _mask((a.data > lo) & (a.data < hi))
    return _record(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * m,))


def _exp(a):
    def backward(g):
        return (g * out,)

    out = _record(np.exp(a.data), "exp", (a,), backward)
    return out


def _log(a):
    return _record(np.log(a.data), "log", (a,), lambda g: (g / a,))


def _tanh(a):
    def backward(g):
        return (g * (1.0 - out * out),)

    out = _record(np.tanh(a.data), "tanh", (a,), backward)
    return out


def _sigmoid(a):
    def backward(g):
        return (g * out * (1.0 - out),)

    # numerically stable split on sign
    x = a.data
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _record(data, "sigmoid", (a,), backward)
    return out


def maximum(a, b):
    """Elementwise maximum; ties send the gradient to ``a``."""
    a = constant(a)
    a, b = _pair(a, b, "maximum")
    m = _mask(a.data >= b.data)
    return _record(np.maximum(a.data, b.data), "maximum", (a, b),
                   lambda g: (g * m, g * (1.0 - m)))


def minimum(a, b):
    a = constant(a)
    a, b = _pair(a, b, "minimum")
    m = _mask(a.data <= b.data)
    return _record(np.minimum(a.data, b.data), "minimum", (a, b),
                   lambda g: (g * m, g * (1.0 - m)))


def where(cond, a, b):
    """Select from ``a`` where ``cond`` (a constant boolean array) holds, else ``b``."""
    a = constant(a)
    a, b = _pair(a, b, "where")
    cond = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)
    m = _mask(cond)
    return _record(np.where(cond, a.data, b.data), "where", (a, b),
                   lambda g: (g * m, g * (1.0 - m)))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def backward(g):
        return (_expand(_reshape(g, kept), a.shape),)

    return _record(a.data.sum(axis=axes, keepdims=keepdims), "sum", (a,), backward)


def _reshape(a, shape):
    data = a.data.reshape(shape)
    if data.shape == a.shape:
        return a
    src = a.shape
    return _record(data, "reshape", (a,), lambda g: (_reshape(g, src),))


def _transpose(a, axes):
    axes = tuple(ax % a.ndim for ax in axes)
    if axes == tuple(range(a.ndim)):
        return a
    inverse = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), "transpose", (a,),
                   lambda g: (_transpose(g, inverse),))


def _sum_to(g, shape):
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and g.shape[lead + i] != 1)
    if axes:
        g = _sum(g, axes, keepdims=True)
    return _reshape(g, shape)


def _expand(a, shape):
    if a.shape == tuple(shape):
        return a
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise _shape_error("expand", a.shape, shape) from None
    src = a.shape
    return _record(data, "expand", (a,), lambda g: (_sum_to(g, src),))


def _flip(a, axes):
    if isinstance(axes, int):
        axes = (axes,)
    return _record(np.flip(a.data, axes), "flip", (a,), lambda g: (_flip(g, axes),))


def _getitem(a, index):
    src = a.shape

    def backward(g):
        return (_scatter(g, index, src),)

    return _record(a.data[index], "getitem", (a,), backward)


def _scatter(g, index, shape):
    """Adjoint of indexing: place ``g`` into zeros of ``shape`` at ``index`` (summing repeats)."""
    out = np.zeros(shape)
    np.add.at(out, index, g.data)
    return _record(out, "scatter", (g,), lambda h: (_getitem(h, index),))


def concat(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    nd = tensors[0].ndim
    axis %= nd
    for t in tensors[1:]:
        rest_a = tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]
        rest_b = t.shape[:axis] + t.shape[axis + 1:]
        if t.ndim != nd or rest_a != rest_b:
            raise _shape_error("concat", tensors[0].shape, t.shape)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        pieces = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = (slice(None),) * axis + (slice(int(lo), int(hi)),)
            pieces.append(_getitem(g, idx))
        return tuple(pieces)

    return _record(np.concatenate([t.data for t in tensors], axis=axis), "concat",
                   tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [constant(t) for t in tensors]
    axis %= tensors[0].ndim + 1
    expanded = [t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product on the last two axes.

    ``b`` is either 2-D (shared across every leading index of ``a``) or has
    exactly the same leading shape as ``a``.
    """
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    if b.ndim == 2:
        def backward(g):
            ga = matmul(g, b.swapaxes(-1, -2))
            a2 = _reshape(a, (-1, a.shape[-1]))
            g2 = _reshape(g, (-1, g.shape[-1]))
            return ga, matmul(a2.swapaxes(0, 1), g2)
    else:
        if a.shape[:-2] != b.shape[:-2]:
            raise _shape_error("matmul", a.shape, b.shape)

        def backward(g):
            return matmul(g, b.swapaxes(-1, -2)), matmul(a.swapaxes(-1, -2), g)

    return _record(np.matmul(a.data, b.data), "matmul", (a, b), backward)


def _pads(padding):
    if isinstance(padding, (tuple, list)):
        return int(padding[0]), int(padding[1])
    return int(padding), int(padding)


def _conv_forward(x, w, ph, pw):
    kh, kw = w.shape[2:]
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x, w, padding=0):
    """2-D cross-correlation, stride 1, zero padding.

    x (B, Cin, H, W), w (Cout, Cin, kh, kw); ``padding`` is an int or a
    (rows, cols) pair.
    """
    x, w = constant(x), constant(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise _shape_error("conv2d", x.shape, w.shape)
    kh, kw = w.shape[2:]
    ph, pw = _pads(padding)
    if ph > kh - 1 or pw > kw - 1:
        raise ValueError(f"conv2d: padding {(ph, pw)} exceeds kernel extent - 1 for {(kh, kw)}")
    if x.shape[2] + 2 * ph < kh or x.shape[3] + 2 * pw < kw:
        raise _shape_error("conv2d", x.shape, w.shape)

    def backward(g):
        w_adj = _flip(_transpose(w, (1, 0, 2, 3)), (2, 3))
        gx = conv2d(g, w_adj, padding=(kh - 1 - ph, kw - 1 - pw))
        gw = _transpose(conv2d(_transpose(x, (1, 0, 2, 3)), _transpose(g, (1, 0, 2, 3)),
                               padding=(ph, pw)), (1, 0, 2, 3))
        return gx, gw

    return _record(_conv_forward(x.data, w.data, ph, pw), "conv2d", (x, w), backward)


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def _corner_setup(x, y, height, width):
    xc = np.clip(x, 0.0, width - 1.0)
    yc = np.clip(y, 0.0, height - 1.0)
    x0 = np.minimum(np.floor(xc), max(width - 2, 0))
    y0 = np.minimum(np.floor(yc), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    idx = [(a * width + b).astype(np.intp) for a, b in ((y0, x0), (y0, x1), (y1, x0), (y1, x1))]
    return idx, x0, y0


def bilinear_sample(value, x, y):
    """Sample ``value`` (N, C, H, W) at fractional pixel coordinates.

    ``x`` (column) and ``y`` (row) have shape (N, P); the result is (N, C, P).
    Out-of-range coordinates are clamped to the border. The first-order
    backward uses the fused kernels; with ``create_graph`` the gradient is
    rebuilt from differentiable primitives so it can be differentiated again.
    """
    value, x, y = constant(value), constant(x), constant(y)
    if value.ndim != 4 or x.shape != y.shape or x.ndim != 2 or x.shape[0] != value.shape[0]:
        raise ShapeError(f"bilinear_sample: value {value.shape}, x {x.shape}, y {y.shape}")

    def backward(g):
        if not _state["grad_enabled"]:
            gv, gx, gy = _kernels.bilinear_backward(g.data, value.data, x.data, y.data)
            return Tensor(gv), Tensor(gx), Tensor(gy)
        return _bilinear_grad_graph(g, value, x, y)

    out = _kernels.bilinear_forward(value.data, x.data, y.data)
    return _record(out, "bilinear_sample", (value, x, y), backward)


def _bilinear_grad_graph(g, value, x, y):
    n, c, h, w = value.shape
    (i00, i01, i10, i11), x0, y0 = _corner_setup(x.data, y.data, h, w)
    wx = _clip(x, 0.0, w - 1.0) - Tensor(x0)
    wy = _clip(y, 0.0, h - 1.0) - Tensor(y0)
    flat = _reshape(value, (n, c, h * w))
    rows = np.arange(n)[:, None]
    corners = []
    for idx in (i00, i01, i10, i11):
        corners.append(_transpose(_getitem(flat, (rows, slice(None), idx)), (0, 2, 1)))
    f00, f01, f10, f11 = corners

    def spread(t):
        return _expand(_reshape(t, (n, 1, t.shape[1])), (n, c, t.shape[1]))

    wx3, wy3 = spread(wx), spread(wy)
    weights = ((1.0 - wx3) * (1.0 - wy3), wx3 * (1.0 - wy3), (1.0 - wx3) * wy3, wx3 * wy3)
    gv = None
    for idx, wt in zip((i00, i01, i10, i11), weights):
        part = _scatter(_transpose(g * wt, (0, 2, 1)), (rows, slice(None), idx), (n, c, h * w))
        gv = part if gv is None else gv + part
    gv = _reshape(gv, value.shape)
    in_x = _mask((x.data > 0) & (x.data < w - 1))
    in_y = _mask((y.data > 0) & (y.data < h - 1))
    dx = (1.0 - wy3) * (f01 - f00) + wy3 * (f11 - f10)
    dy = (1.0 - wx3) * (f10 - f00) + wx3 * (f11 - f01)
    gx = _sum(g * dx, 1) * in_x
    gy = _sum(g * dy, 1) * in_y
    return gv, gx, gy


# ---------------------------------------------------------------------------
# graphs and differentiation
# ---------------------------------------------------------------------------

class Graph:
    """Topologically ordered view of the graph that produced ``output``.

    Inputs always precede the nodes that consume them.
    """

    def __init__(self, output):
        self.output = output
        self.nodes = _toposort(output)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __contains__(self, t):
        return any(n is t for n in self.nodes)

    def ops(self):
        return [n.op for n in self.nodes]


def _toposort(output):
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def clear_graph(output):
    """Release every node reachable from ``output``; values are kept."""
    for t in _toposort(output):
        t._node = None


def grad(output, wrt, create_graph=False, grad_output=None):
    """Gradient of a scalar ``output`` with respect to each tensor in ``wrt``.

    Tensors unreachable from ``output`` receive zeros of their own shape.
    With ``create_graph`` the returned gradients are recorded and may be
    differentiated again.
    """
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)
    if grad_output is None and output.size != 1:
        raise ShapeError(f"grad: output must be a scalar, got shape {output.shape}")
    counters["grad"] += 1
    seed = grad_output if grad_output is not None else Tensor(np.ones(output.shape))
    grads = {id(output): constant(seed)}
    keep = {id(t) for t in targets}
    with _grad_mode(create_graph):
        for t in reversed(_toposort(output)):
            g = grads.get(id(t)) if id(t) in keep else grads.pop(id(t), None)
            if g is None or t._node is None:
                continue
            parent_grads = t._node.backward(g)
            for p, pg in zip(t._node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"{t._node.op} backward produced {pg.shape} for input {p.shape}")
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    result = []
    for t in targets:
        g = grads.get(id(t))
        result.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return result[0] if single else result


def backward(output, wrt):
    """d(output)/d(wrt) as a graph-recorded tensor (differentiable again)."""
    return grad(output, wrt, create_graph=True)


def reachable(output, wrt):
    """True when ``wrt`` participates in the graph of ``output``."""
    return any(t is wrt for t in _toposort(output))
