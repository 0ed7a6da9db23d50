import math
from types import SimpleNamespace

import numpy as np
import pytest

from heatdet.autodiff import Tensor, counters, no_grad
from heatdet.harness.config import RunConfig
from heatdet.harness.data import batch_arrays, make_split
from heatdet.harness.loss import detection_loss, set_losses
from heatdet.heatmap import normalize_values
from heatdet.autodiff.gradcheck import check_gradients
from heatdet.model import MAP_NAMES, Detector, PositiveReadout, Targets

TINY = RunConfig(width=8, image_size=32, decoder_depth=1, query_budget=6, heads=2, points=2)


def _batch(cfg, n=2, offset=0):
    scenes = make_split("train", n + offset, size=cfg.image_size, classes=cfg.classes)[offset:]
    images, boxes, labels = batch_arrays(scenes)
    side = cfg.image_size // 4
    return Tensor(images), Targets.build(boxes, labels, side, side)


def test_targets_cells():
    t = Targets.build([np.array([[0.51, 0.26, 0.2, 0.1]])], [np.array([2])], 16, 16)
    assert (t.rows[0], t.cols[0], t.labels[0]) == (4, 8, 2)
    np.testing.assert_allclose(t.cell_boxes[0], [0.51 * 16 - 8.5, 0.26 * 16 - 4.5, 3.2, 1.6])


@pytest.mark.parametrize("toggles", [{}, {"lsconv_enabled": False}, {"mohfe_enabled": False}, {"hqr_enabled": False}])
def test_forward_shapes(toggles):
    cfg = TINY.replace(**toggles)
    m = Detector(cfg)
    images, targets = _batch(cfg)
    r = m(images, targets)
    assert r.output.logits.shape == (2, cfg.query_budget, cfg.classes + 1)
    assert r.output.boxes.shape == (2, cfg.query_budget, 4)
    assert np.all((r.output.boxes.data > 0) & (r.output.boxes.data < 1))
    for k in MAP_NAMES:
        assert r.maps[k].shape == (2, 8, 8)


def test_loss_finite_over_seeds():
    cfg = TINY
    for seed in range(50):
        m = Detector(cfg.replace(seed=seed))
        images, targets = _batch(cfg, 2, offset=seed)
        loss, parts, _ = detection_loss(m, m(images, targets), targets)
        assert math.isfinite(loss.item()), (seed, {k: v.item() for k, v in parts.items()})


def test_uniform_logits_give_log_classes():
    nc = 3
    out = SimpleNamespace(logits=Tensor(np.zeros((2, 5, nc + 1))), boxes=Tensor(np.full((2, 5, 4), 0.3)),
                          valid=np.ones((2, 5), bool))
    truths = [(np.array([[0.3, 0.3, 0.3, 0.3]]), np.array([1])), (np.zeros((0, 4)), np.zeros(0, np.int64))]
    parts, _ = set_losses(out, truths, nc)
    assert parts["ce"].item() == pytest.approx(math.log(nc + 1), abs=1e-12)
    assert parts["box"].item() == pytest.approx(0.0, abs=1e-12)
    assert parts["giou"].item() == pytest.approx(0.0, abs=1e-12)


def test_confident_correct_logits_lower_ce():
    nc = 3
    logits = np.zeros((1, 3, nc + 1))
    logits[0, :, nc] = 8.0
    boxes = np.array([[[0.3, 0.3, 0.2, 0.2], [0.7, 0.7, 0.2, 0.2], [0.5, 0.1, 0.1, 0.1]]])
    truths = [(boxes[0, :2], np.array([0, 2]))]
    logits[0, 0] = [8, 0, 0, 0]
    logits[0, 1] = [0, 0, 8, 0]
    good, _ = set_losses(SimpleNamespace(logits=Tensor(logits), boxes=Tensor(boxes), valid=np.ones((1, 3), bool)), truths, nc)
    bad, _ = set_losses(SimpleNamespace(logits=Tensor(np.zeros_like(logits)), boxes=Tensor(boxes),
                                        valid=np.ones((1, 3), bool)), truths, nc)
    assert good["ce"].item() < 0.01 < bad["ce"].item()


def test_training_differentiates_and_inference_does_not():
    m = Detector(TINY)
    images, targets = _batch(TINY)
    g0 = counters["grad"]
    m(images, targets, train=True)
    assert counters["grad"] > g0
    g1 = counters["grad"]
    with no_grad():
        r = m(images, train=False)
    assert counters["grad"] == g1
    for k, name in enumerate(MAP_NAMES):
        np.testing.assert_array_equal(r.maps[name], normalize_values(r.predicted.data[:, k]))


def test_training_pass_needs_targets():
    m = Detector(TINY)
    images, _ = _batch(TINY)
    with pytest.raises(ValueError):
        m(images, None, train=True)


def test_selected_queries_pass_mask():
    m = Detector(TINY)
    images, targets = _batch(TINY, 3)
    r = m(images, targets)
    for b in range(3):
        idx = r.queries.token_index[b][r.queries.valid[b]]
        assert r.mask[b].reshape(-1)[idx].all()


def _random_set(rng, m=6):
    n = int(rng.integers(2, 5))
    boxes = rng.uniform(0.2, 0.8, size=(1, m, 4))
    boxes[..., 2:] *= 0.4
    tb = rng.uniform(0.2, 0.8, size=(n, 4))
    tb[:, 2:] *= 0.4
    out = SimpleNamespace(logits=Tensor(rng.normal(size=(1, m, 4))), boxes=Tensor(boxes), valid=np.ones((1, m), bool))
    return out, tb, rng.integers(0, 3, size=n)


def test_removing_object_with_fixed_matches_never_adds_box_cost():
    rng = np.random.default_rng(11)
    for _ in range(100):
        out, tb, tl = _random_set(rng)
        _, (_, qi, ti) = set_losses(out, [(tb, tl)], 3)
        per_pair = np.abs(out.boxes.data[0, qi] - tb[ti]).sum(-1)
        drop = int(rng.integers(len(tb)))
        assert per_pair[ti != drop].sum() <= per_pair.sum()


def test_removing_object_bounds_rematched_cost():
    from heatdet.harness.loss import _softmax_np
    from heatdet.harness.matching import hungarian_match, match_cost
    rng = np.random.default_rng(12)
    for _ in range(200):
        out, tb, tl = _random_set(rng)
        cost = match_cost(_softmax_np(out.logits.data[0]), out.boxes.data[0], tl, tb)
        full = hungarian_match(cost)
        drop = int(rng.integers(len(tb)))
        keep = np.arange(len(tb)) != drop
        fewer = hungarian_match(cost[:, keep])
        removed = cost[full.pred_index[full.truth_index == drop], drop].sum()
        assert fewer.cost <= full.cost - removed + 1e-12


@pytest.mark.parametrize("balanced", [False, True])
def test_positive_readout_weights(balanced):
    r = PositiveReadout(np.random.default_rng(3), 6, 4, balanced=balanced)
    w = r.weight().data
    assert np.all(w > 0)
    np.testing.assert_allclose(w, r.weight_array(), rtol=1e-12)
    if balanced:
        np.testing.assert_allclose(np.linalg.norm(w, axis=1), np.exp(r.log_gain.data[0]), rtol=1e-12)


def test_balanced_readout_gradients():
    rng = np.random.default_rng(4)
    r = PositiveReadout(rng, 3, 2, balanced=True)
    x = Tensor(rng.uniform(0, 1, size=(1, 3, 2, 2)))

    def fn(raw, gain):
        r.raw, r.log_gain = raw, gain
        return (r(x) * r(x)).sum()

    assert check_gradients(fn, [r.raw, r.log_gain]) < 1e-5


@pytest.mark.parametrize("head", ["balanced", "quadratic", "mlp"])
def test_class_heads_give_bounded_maps(head):
    cfg = TINY.replace(class_head=head)
    m = Detector(cfg)
    images, targets = _batch(cfg)
    r = m(images, targets)
    for k in MAP_NAMES:
        assert r.maps[k].min() >= 0 and r.maps[k].max() <= 1
    assert r.dense_logits.shape == (2, cfg.classes + 1, 8, 8)


def test_aux_outputs_only_while_training():
    cfg = TINY.replace(decoder_depth=3)
    m = Detector(cfg)
    images, targets = _batch(cfg)
    r = m(images, targets)
    assert len(r.output.aux) == 2
    for logits, boxes in r.output.aux:
        assert logits.shape == r.output.logits.shape and boxes.shape == r.output.boxes.shape
    _, parts, _ = detection_loss(m, r, targets)
    assert "aux" in parts and math.isfinite(parts["aux"].item())
    with no_grad():
        assert m(images, train=False).output.aux == []
    shallow = Detector(TINY)
    assert shallow(images, targets).output.aux == []


def test_bounded_features_lie_in_unit_interval():
    images, _ = _batch(TINY)
    a, _ = Detector(TINY).features(images)
    assert a.data.min() >= 0.0 and a.data.max() < 1.0
    raw, _ = Detector(TINY.replace(bounded_features=False)).features(images)
    assert raw.data.max() > 0.0


@pytest.mark.parametrize("box_head", ["mlp", "quadratic"])
def test_box_heads_run(box_head):
    cfg = TINY.replace(box_head=box_head)
    m = Detector(cfg)
    images, targets = _batch(cfg)
    r = m(images, targets)
    assert r.dense_boxes.shape == (2, 4, 8, 8)
    assert np.all(np.isfinite(r.maps["bbox"]))
