import zlib

import numpy as np
import pytest

from heatdet import _kernels
from heatdet.autodiff import (
    Graph, ShapeError, Tensor, UnsupportedOrderError, backward, bilinear_sample, concat,
    conv2d, enable_grad, grad, maximum, minimum, no_grad, nth_derivative, tensor, where,
)
from heatdet.autodiff import functional as F
from heatdet.autodiff.gradcheck import check_gradients, numeric_grad, relative_error


def away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def test_relu_values():
    assert tensor([-1.0, 0.0, 2.0]).relu().data.tolist() == [0.0, 0.0, 2.0]


def test_matmul_identity():
    m = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal((tensor(np.eye(3)) @ tensor(m)).data, m)


def test_conv2d_center_sum():
    out = conv2d(tensor(np.ones((1, 1, 5, 5))), tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert out.data[0, 0, 2, 2] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv2d_matches_loop():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(2, 3, 5, 6)), rng.normal(size=(4, 3, 3, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 6))
    for b in range(2):
        for o in range(4):
            for i in range(5):
                for j in range(6):
                    ref[b, o, i, j] = (xp[b, :, i:i + 3, j:j + 3] * w[o]).sum()
    np.testing.assert_allclose(conv2d(tensor(x), tensor(w), padding=1).data, ref, atol=1e-12)


def test_power_rule_and_relu_inactive():
    x = tensor(3.0, requires_grad=True)
    assert grad(x * x, x).item() == 6.0
    x = tensor(-1.0, requires_grad=True)
    assert grad(x.relu(), x).item() == 0.0
    z = tensor(0.0, requires_grad=True)
    assert grad(z.relu(), z).item() == 0.0


def test_conv2d_input_gradient_finite_difference():
    rng = np.random.default_rng(2)
    w = tensor(rng.normal(size=(2, 1, 3, 3)))
    x = tensor(rng.normal(size=(1, 1, 4, 4)), requires_grad=True)
    fn = lambda x: conv2d(x, w, padding=1).sum()
    a = grad(fn(x), x).data
    n = numeric_grad(fn, [x], 0, eps=1e-4)
    assert relative_error(a, n) < 1e-5


def test_shape_mismatch_names_operation():
    with pytest.raises(ShapeError, match=r"add: shape mismatch \(2, 3\) vs \(3,\)"):
        tensor(np.ones((2, 3))) + tensor(np.ones(3))
    with pytest.raises(ShapeError, match="matmul"):
        tensor(np.ones((2, 3))) @ tensor(np.ones((2, 3)))


def test_scalar_broadcast():
    a = tensor(np.ones((2, 2)), requires_grad=True)
    s = tensor(3.0, requires_grad=True)
    y = (a * s).sum()
    ga, gs = grad(y, [a, s])
    np.testing.assert_array_equal(ga.data, np.full((2, 2), 3.0))
    assert gs.item() == 4.0


def test_unreachable_gives_zeros():
    a = tensor(np.ones(3), requires_grad=True)
    b = tensor(np.ones((2, 2)), requires_grad=True)
    g = grad(a.sum(), b)
    np.testing.assert_array_equal(g.data, np.zeros((2, 2)))


def test_higher_derivatives_analytic():
    x = tensor(2.0, requires_grad=True)
    assert nth_derivative(x ** 3, x, 2).item() == pytest.approx(12.0)
    for v in (-1.5, 0.3, 7.0):
        x = tensor(v, requires_grad=True)
        assert nth_derivative(x * x * x, x, 3).item() == pytest.approx(6.0)


def test_second_derivative_of_cubic_sum():
    rng = np.random.default_rng(3)
    a = tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    d2 = nth_derivative((a * a * a).sum(), a, 2)
    np.testing.assert_allclose(d2.data, 6 * a.data, rtol=0, atol=1e-12)


def test_order_limit():
    x = tensor(1.0, requires_grad=True)
    with pytest.raises(UnsupportedOrderError):
        nth_derivative(x * x, x, 4)


def test_closure_backward_of_backward():
    rng = np.random.default_rng(4)
    for _ in range(5):
        c = rng.normal(size=3)
        x = tensor(rng.normal(size=(4,)), requires_grad=True)
        f = (x * c[0] + x * x * c[1] + x * x * x * c[2]).sum()
        g = backward(f, x)
        twice = backward(g.sum(), x)
        np.testing.assert_array_equal(twice.data, nth_derivative(f, x, 2).data)
        s = tensor(rng.normal(), requires_grad=True)
        h = s * s * s * c[2] + s * s * c[1]
        np.testing.assert_array_equal(backward(backward(h, s), s).data, nth_derivative(h, s, 2).data)


def test_linearity_of_backward():
    rng = np.random.default_rng(5)
    x = tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = tensor(rng.normal(size=(4, 2)))
    f = (x @ w).tanh().sum()
    g = (x * x).exp().mean()
    a, b = 0.7, -1.3
    lhs = grad(f * a + g * b, x).data
    rhs = a * grad(f, x).data + b * grad(g, x).data
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_determinism():
    def run():
        rng = np.random.default_rng(6)
        x = tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        w = tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        y = F.softmax(conv2d(x, w, padding=1).reshape(3, 25)).sum(axis=0).exp().sum()
        return [t.data for t in grad(y, [x, w])]
    a, b = run(), run()
    for p, q in zip(a, b):
        assert p.tobytes() == q.tobytes()


def test_graph_is_topological():
    x = tensor(np.ones(3), requires_grad=True)
    y = ((x * 2.0).exp() + x).sum()
    g = Graph(y)
    pos = {id(n): i for i, n in enumerate(g.nodes)}
    for n in g.nodes:
        if n._node is not None:
            for p in n._node.parents:
                if p.requires_grad:
                    assert pos[id(p)] < pos[id(n)]
    assert g.nodes[-1] is y


# -- finite-difference sweep over every primitive (20 random instances each) --

def _ops(rng):
    w33 = rng.normal(size=(3, 3))
    w43 = rng.normal(size=(4, 3))
    return {
        "add": (lambda a, b: ((a + b) * (a + b)).sum(), lambda: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "sub_mul": (lambda a, b: ((a - b) * a * b).sum(), lambda: [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]),
        "div": (lambda a, b: (a / b).sum(), lambda: [rng.normal(size=(5,)), rng.uniform(0.5, 2, size=(5,))]),
        "scale_pow": (lambda a: ((a * 2.5 + 1.0) ** 3).sum(), lambda: [rng.normal(size=(4,))]),
        "relu": (lambda a: (a.relu() * a).sum(), lambda: [away_from_zero(rng, (3, 3))]),
        "exp_log": (lambda a: (a.exp() + (a * a + 1.0).log()).sum(), lambda: [rng.normal(size=(6,))]),
        "tanh_sigmoid": (lambda a: (a.tanh() * a.sigmoid()).sum(), lambda: [rng.normal(size=(6,))]),
        "matmul": (lambda a, b: ((a @ b) * (a @ b)).sum(), lambda: [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        "bmm": (lambda a, b: ((a @ b).tanh()).sum(), lambda: [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 2))]),
        "conv2d": (lambda x, w: (conv2d(x, w, padding=1) ** 2).sum(),
                   lambda: [rng.normal(size=(2, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))]),
        "conv2d_rect": (lambda x, w: (conv2d(x, w, padding=(0, 1)) ** 2).sum(),
                        lambda: [rng.normal(size=(1, 2, 4, 5)), rng.normal(size=(2, 2, 1, 3))]),
        "sum_mean": (lambda a: (a.sum(axis=0) * a.mean(axis=1).sum()).sum(), lambda: [rng.normal(size=(3, 3))]),
        "softmax": (lambda a: (F.softmax(a) * tensor(w33)).sum(), lambda: [rng.normal(size=(3, 3))]),
        "log_softmax": (lambda a: (F.log_softmax(a) * tensor(w33)).sum(), lambda: [rng.normal(size=(3, 3))]),
        "concat": (lambda a, b: (concat([a, b], axis=1) ** 2).sum(), lambda: [rng.normal(size=(2, 2)), rng.normal(size=(2, 3))]),
        "maximum": (lambda a, b: (maximum(a, b) * a).sum(), lambda: [rng.normal(size=(6,)), rng.normal(size=(6,)) + 0.3]),
        "minimum": (lambda a, b: (minimum(a, b) * b).sum(), lambda: [rng.normal(size=(6,)), rng.normal(size=(6,)) + 0.3]),
        "layer_norm": (lambda x, g: (F.layer_norm(x, g, g * 0.5) * tensor(w33)).sum(),
                       lambda: [rng.normal(size=(3, 3)), rng.normal(size=(3,))]),
        "huber": (lambda r: F.huber(r, 1.0).sum(), lambda: [away_from_zero(rng, (8,)) * 1.5]),
        "getitem": (lambda a: (a[1:, ::2] ** 2).sum() + (a[[0, 0, 2]] ** 3).sum(), lambda: [rng.normal(size=(3, 4))]),
        "reshape_transpose": (lambda a: (a.reshape(2, 6).transpose(1, 0) @ tensor(w33[:2])).tanh().sum(),
                              lambda: [rng.normal(size=(3, 4))]),
        "expand": (lambda a: (a.expand((4, 3)) * tensor(w43)).sum(), lambda: [rng.normal(size=(3,))]),
        "avg_pool": (lambda x: (F.avg_pool2d(x) ** 2).sum(), lambda: [rng.normal(size=(1, 2, 4, 4))]),
        "where": (lambda a, b: (where(a.data > 0, a * a, b * 3.0)).sum(), lambda: [rng.normal(size=(5,)), rng.normal(size=(5,))]),
    }


@pytest.mark.parametrize("name", sorted(_ops(np.random.default_rng(0))))
def test_gradcheck_primitives(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    fn, make = _ops(rng)[name]
    for _ in range(20):
        err = check_gradients(fn, [Tensor(a) for a in make()])
        assert err <= 1e-4, (name, err)


def _off_grid(rng, n, p, lo, hi):
    v = rng.uniform(lo, hi, size=(n, p))
    frac = v - np.floor(v)
    return np.floor(v) + np.clip(frac, 0.02, 0.98)


@pytest.mark.parametrize("backend", _kernels.available_backends())
def test_gradcheck_bilinear(backend):
    prev = _kernels.use_backend(backend)
    try:
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = rng.normal(size=(2, 3, 4, 5))
            x = _off_grid(rng, 2, 6, 0, 3.9)
            y = _off_grid(rng, 2, 6, 0, 2.9)
            r = tensor(rng.normal(size=(2, 3, 6)))
            err = check_gradients(lambda v, x, y: (bilinear_sample(v, x, y) * r).sum(), [v, x, y])
            assert err <= 1e-4
    finally:
        _kernels.use_backend(prev)


def test_bilinear_graph_gradient_matches_kernel():
    rng = np.random.default_rng(8)
    v = tensor(rng.normal(size=(2, 3, 4, 5)), requires_grad=True)
    x = tensor(rng.uniform(-1, 5, size=(2, 7)), requires_grad=True)
    y = tensor(rng.uniform(-1, 4, size=(2, 7)), requires_grad=True)
    r = tensor(rng.normal(size=(2, 3, 7)))
    out = (bilinear_sample(v, x, y) * r).sum()
    fast = grad(out, [v, x, y])
    slow = grad(out, [v, x, y], create_graph=True)
    for a, b in zip(fast, slow):
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)


def test_bilinear_second_order_matches_finite_difference():
    rng = np.random.default_rng(9)
    v = tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
    x = tensor(_off_grid(rng, 1, 3, 0, 2.9), requires_grad=True)
    y = tensor(_off_grid(rng, 1, 3, 0, 2.9), requires_grad=True)

    def gx_dot_v(v, x, y):
        with enable_grad():
            out = (bilinear_sample(v, x, y) ** 2).sum()
            return grad(out, x, create_graph=True).sum()

    g = grad(gx_dot_v(v, x, y), v).data
    n = numeric_grad(gx_dot_v, [v, x, y], 0)
    assert relative_error(g, n) < 1e-5


@pytest.mark.parametrize("fn", [F.softmax, F.log_softmax])
def test_softmax_second_order(fn):
    rng = np.random.default_rng(77)
    w = tensor(rng.normal(size=(2, 4)))
    x0 = rng.normal(size=(2, 4))

    def first(x):
        with enable_grad():
            y = (fn(x, axis=-1) * w).sum()
            (g,) = grad(y, [x], create_graph=True)
            return (g * g).sum()

    x = tensor(x0.copy(), requires_grad=True)
    analytic = grad(first(x), [x])[0].data
    numeric = numeric_grad(first, [x], 0, eps=1e-5)
    assert relative_error(analytic, numeric) < 1e-6
