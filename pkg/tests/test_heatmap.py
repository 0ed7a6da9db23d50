import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from heatdet.autodiff import Tensor, conv2d, grad, tensor
from heatdet.autodiff.nn import SGD
from heatdet.heatmap import (
    Heatmap, HeatmapError, HeatmapPredictor, MixConfig, bbox_heatmap, class_heatmap,
    compute_alpha, compute_beta, gradient_weights, huber_value, mix_heatmaps, mix_values,
    normalize_heatmap, point_derivatives, scatter_points, train_heatmap_predictor,
)
from heatdet.autodiff.functional import huber


def beta_loops(alpha, g):
    k, h, w = alpha.shape
    out = np.zeros(k)
    for c in range(k):
        for i in range(h):
            for j in range(w):
                out[c] += alpha[c, i, j] * max(g[c, i, j], 0.0)
    return out


def heatmap_loops(a, beta):
    k, h, w = a.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            s = 0.0
            for c in range(k):
                s += beta[c] * a[c, i, j]
            out[i, j] = max(s, 0.0)
    return out


def test_alpha_vanishes_for_linear_score():
    a = tensor(np.random.default_rng(0).normal(size=(2, 3, 3)), requires_grad=True)
    alpha = compute_alpha(a, (a * 1.7).sum())
    np.testing.assert_array_equal(alpha, 0.0)
    w = gradient_weights(a, (a * 1.7).sum())
    np.testing.assert_array_equal(w.beta, 0.0)
    np.testing.assert_array_equal(class_heatmap(a, w.beta).values, 0.0)


def test_alpha_cubic_fixture():
    a = tensor(np.random.default_rng(1).normal(size=(3, 4, 4)), requires_grad=True)
    alpha = compute_alpha(a, (a * a * a).sum())
    np.testing.assert_allclose(alpha, 6 * a.data + 6, rtol=0, atol=1e-8)


def _relu_head(rng, k, hidden):
    w1 = rng.normal(size=(hidden, k, 1, 1))
    w2 = rng.normal(size=(1, hidden, 1, 1)) * 0.5
    b1 = rng.normal(size=hidden)

    def score(a):
        z = conv2d(a.reshape(1, *a.shape), tensor(w1)) + tensor(b1.reshape(1, -1, 1, 1)).expand((1, hidden) + a.shape[1:])
        return (conv2d(z.relu(), tensor(w2)) * 0.3).exp().sum()

    def pre(a):
        return np.einsum("hk,kij->hij", w1[:, :, 0, 0], a) + b1[:, None, None]
    return score, pre


def fd_diagonal(f, x, h=1e-3):
    d2 = np.zeros_like(x)
    d3 = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        vals = {}
        for s in (-2, -1, 0, 1, 2):
            y = flat.copy()
            y[i] += s * h
            vals[s] = f(y.reshape(x.shape))
        d2.reshape(-1)[i] = (vals[1] - 2 * vals[0] + vals[-1]) / h**2
        d3.reshape(-1)[i] = (vals[2] - 2 * vals[1] + 2 * vals[-1] - vals[-2]) / (2 * h**3)
    return d2 + d3


def test_alpha_relu_head_matches_finite_differences():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 3:
        score, pre = _relu_head(rng, 2, 5)
        a0 = rng.normal(size=(2, 3, 3))
        if np.abs(pre(a0)).min() < 0.05:
            continue
        a = tensor(a0, requires_grad=True)
        alpha = compute_alpha(a, score(a))
        ref = fd_diagonal(lambda x: score(Tensor(x)).item(), a0)
        assert np.abs(alpha - ref).max() / np.abs(ref).max() < 1e-3
        checked += 1


def test_alpha_errors():
    a = tensor(np.ones((1, 2, 2)), requires_grad=True)
    with pytest.raises(HeatmapError):
        compute_alpha(a, a * a)
    other = tensor(np.ones(2), requires_grad=True)
    with pytest.raises(HeatmapError):
        compute_alpha(a, (other * other).sum())


def test_beta_examples():
    g = -np.abs(np.random.default_rng(3).normal(size=(2, 4, 4)))
    np.testing.assert_array_equal(compute_beta(np.ones((2, 4, 4)), g), 0.0)
    np.testing.assert_array_equal(compute_beta(np.ones((3, 4, 4)), np.ones((3, 4, 4))), 16.0)
    with pytest.raises(ValueError):
        compute_beta(np.ones((2, 3, 3)), np.ones((2, 3, 4)))


def test_beta_and_heatmap_match_loops():
    rng = np.random.default_rng(4)
    alpha, g = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
    assert np.array_equal(compute_beta(alpha, g), beta_loops(alpha, g))
    a, beta = rng.normal(size=(3, 4, 5)), rng.normal(size=3)
    assert np.array_equal(class_heatmap(a, beta).values, heatmap_loops(a, beta))


def test_class_heatmap_examples():
    a = np.abs(np.random.default_rng(5).normal(size=(1, 3, 3)))
    np.testing.assert_array_equal(class_heatmap(a, np.zeros(1)).values, 0.0)
    np.testing.assert_array_equal(class_heatmap(a, np.ones(1)).values, a[0])


def test_huber_definition():
    assert huber_value(0.5) == pytest.approx(0.125)
    assert huber_value(2.0) == pytest.approx(1.5)
    assert huber(tensor([0.5, -2.0]), 1.0).data.tolist() == [0.125, 1.5]


def test_bbox_heatmap_zero_for_perfect_regression():
    a = tensor(np.random.default_rng(6).normal(size=(2, 3, 3)), requires_grad=True)
    target = a.data.copy()
    loss = huber(a - target, 1.0).sum()
    np.testing.assert_array_equal(bbox_heatmap(a, loss).values, 0.0)


def test_bbox_pipeline_equals_class_pipeline_on_same_graph():
    rng = np.random.default_rng(7)
    a = tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
    w = tensor(rng.normal(size=(2, 3, 3)))
    reg_loss = huber((a * w).tanh() - 0.2, 1.0).sum()
    via_class = class_heatmap(a, gradient_weights(a, reg_loss).beta).values
    np.testing.assert_array_equal(bbox_heatmap(a, reg_loss).values, via_class)


def test_normalize_examples():
    assert normalize_heatmap(Heatmap([[0.0, 2.0, 4.0]])).values.tolist() == [[0.0, 0.5, 1.0]]
    assert normalize_heatmap(Heatmap([[3.0, 3.0, 3.0]])).values.tolist() == [[1.0, 1.0, 1.0]]
    h = Heatmap(np.random.default_rng(8).normal(size=(4, 4)))
    once = normalize_heatmap(h)
    np.testing.assert_array_equal(normalize_heatmap(Heatmap(once.values)).values, once.values)


def test_mix_examples():
    hc = Heatmap(np.array([[1.0, 0.0], [0.2, 0.4]]), normalized=True)
    hb = Heatmap(np.array([[0.0, 1.0], [0.6, 0.1]]), normalized=True)
    raw = mix_heatmaps(hc, hb, MixConfig(lam=0.5), renormalize=False)
    assert raw.values[0, 0] == 0.5
    assert np.array_equal(mix_heatmaps(hc, hb, MixConfig(lam=1.0), renormalize=False).values, hc.values)
    rng = np.random.default_rng(9)
    a, b = rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5))
    a[0, 0], a[1, 1], b[0, 0], b[1, 1] = 0.0, 1.0, 0.0, 1.0
    got = mix_heatmaps(Heatmap(a, True), Heatmap(b, True), MixConfig(lam=0.3), renormalize=False).values
    ref = np.empty((5, 5))
    for i in range(5):
        for j in range(5):
            ref[i, j] = 0.3 * a[i, j] + 0.7 * b[i, j]
    assert np.array_equal(got, ref)
    with pytest.raises(ValueError):
        mix_heatmaps(Heatmap(np.ones((2, 2))), Heatmap(np.ones((3, 2))))
    with pytest.raises(ValueError):
        MixConfig(lam=1.5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(0, 1)),
       arrays(np.float64, (4, 4), elements=st.floats(0, 1)),
       st.floats(0, 1))
def test_mixing_is_affine(h1, h2, lam):
    total = mix_values(h1, h2, lam) + mix_values(h2, h1, lam)
    np.testing.assert_allclose(total, h1 + h2, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (2,), elements=st.floats(-3, 3)))
def test_heatmaps_non_negative(a, beta):
    assert (class_heatmap(a, beta).values >= 0).all()
    assert (normalize_heatmap(class_heatmap(a, beta)).values >= 0).all()


def test_point_derivatives_match_full_probe():
    rng = np.random.default_rng(10)
    k, hidden = 3, 4
    w1, w2 = rng.normal(size=(k, hidden)), rng.normal(size=(hidden,))
    a0 = rng.normal(size=(2, k, 3, 3))
    pts = (np.array([0, 1, 1]), np.array([0, 2, 2]), np.array([1, 0, 0]))

    def head(x):
        return ((x @ tensor(w1)).tanh() @ tensor(w2.reshape(-1, 1))).sum()

    a = tensor(a0, requires_grad=True)
    picked = a[pts[0], :, pts[1], pts[2]]
    full = gradient_weights(a, head(picked))

    first, alpha = point_derivatives(a0[pts[0], :, pts[1], pts[2]], lambda x, rows: head(x))
    np.testing.assert_allclose(scatter_points(alpha, *pts, a0.shape), full.alpha, atol=1e-12)
    np.testing.assert_allclose(scatter_points(first, *pts, a0.shape), full.first_grad, atol=1e-12)


def test_predictor_fits_constant_target():
    rng = np.random.default_rng(11)
    pred = HeatmapPredictor(rng, 4)
    feats = rng.normal(size=(1, 4, 5, 5))
    target = np.full((1, 1, 5, 5), 0.5)
    train_heatmap_predictor(pred, feats, target, steps=500, lr=1e-2)
    out = pred(Tensor(feats)).data
    assert np.abs(out - 0.5).max() < 0.01
    assert ((out > 0) & (out < 1)).all()


def test_predictor_loss_non_increasing():
    rng = np.random.default_rng(12)
    pred = HeatmapPredictor(rng, 4)
    feats = rng.normal(size=(1, 4, 5, 5))
    target = rng.uniform(size=(1, 1, 5, 5))
    hist = train_heatmap_predictor(pred, feats, target, steps=10, optimizer=SGD(pred.parameters(), lr=1e-2))
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_predictor_range():
    rng = np.random.default_rng(13)
    pred = HeatmapPredictor(rng, 2)
    out = pred(Tensor(rng.normal(size=(1, 2, 3, 3)))).data
    assert ((out > 0) & (out < 1)).all()
    # float64 saturates at large logits; the closed interval must still hold
    out = pred(Tensor(rng.normal(size=(1, 2, 3, 3)) * 1e3)).data
    assert np.isfinite(out).all() and ((out >= 0) & (out <= 1)).all()


def test_predictor_shape_mismatch():
    pred = HeatmapPredictor(np.random.default_rng(0), 2)
    with pytest.raises(ValueError):
        train_heatmap_predictor(pred, np.ones((1, 2, 3, 3)), np.ones((1, 1, 4, 4)))
