"""Gradient-weighted class and box heatmaps, mixing, and the distilled predictor.

Weights follow the higher-order Grad-CAM recipe: per-element coefficients
from the second and third diagonal derivatives of a score, aggregated per
channel against the rectified first derivative, then used to combine the
activation channels into one spatial map.
"""
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeError, Tensor, diagonal_derivatives, reachable, tensor,
)
from .autodiff.functional import mse
from .autodiff.nn import Adam, Conv2d, Module


class HeatmapError(ValueError):
    pass


@dataclass
class Heatmap:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def height(self):
        return self.values.shape[-2]

    @property
    def width(self):
        return self.values.shape[-1]


@dataclass
class GradWeights:
    alpha: np.ndarray
    beta: np.ndarray
    first_grad: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class MixConfig:
    lam: float = 0.5
    huber_delta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.huber_delta <= 0:
            raise ValueError(f"huber_delta must be positive, got {self.huber_delta}")


def _check_score(activations, score):
    if score.size != 1:
        raise HeatmapError(f"score must be a scalar, got shape {score.shape}")
    if not activations.requires_grad or not reachable(score, activations):
        raise HeatmapError("activations do not participate in the score's graph")


def compute_alpha(activations, score, groups=None):
    """Per-element coefficient: second plus third diagonal derivative of ``score``."""
    _check_score(activations, score)
    _, d2, d3 = diagonal_derivatives(score, activations, 3, groups=groups, create_graph=False)
    return d2.data + d3.data


def compute_beta(alpha, first_grad):
    """Channel weights: spatial sum of ``alpha * relu(first_grad)`` over (..., K, H, W)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    first_grad = np.asarray(first_grad, dtype=np.float64)
    if alpha.shape != first_grad.shape:
        raise ShapeError(f"compute_beta: shape mismatch {alpha.shape} vs {first_grad.shape}")
    terms = alpha * np.maximum(first_grad, 0.0)
    # running sums in row-major order, so results do not depend on numpy's pairwise blocking
    flat = terms.reshape(terms.shape[:-2] + (-1,))
    return np.cumsum(flat, axis=-1)[..., -1] if flat.shape[-1] else flat.sum(axis=-1)


def gradient_weights(activations, score, groups=None):
    """alpha, beta and the first derivative for one score, in a single sweep."""
    _check_score(activations, score)
    d1, d2, d3 = diagonal_derivatives(score, activations, 3, groups=groups, create_graph=False)
    alpha = d2.data + d3.data
    return GradWeights(alpha=alpha, beta=compute_beta(alpha, d1.data), first_grad=d1.data)


def class_heatmap(activations, beta):
    """relu(sum_k beta_k * A_k) for activations (..., K, H, W) and beta (..., K)."""
    a = activations.data if isinstance(activations, Tensor) else np.asarray(activations, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != a.shape[:-2]:
        raise ShapeError(f"class_heatmap: beta {beta.shape} does not match channels of {a.shape}")
    terms = beta[..., None, None] * a
    total = np.cumsum(terms, axis=-3)[..., -1, :, :] if a.shape[-3] else terms.sum(axis=-3)
    return Heatmap(np.maximum(total, 0.0))


def bbox_heatmap(activations, reg_loss, groups=None):
    """Same weighting pipeline with the box-regression loss in place of the class score."""
    w = gradient_weights(activations, reg_loss, groups=groups)
    return class_heatmap(activations, w.beta)


def huber_value(residual, delta=1.0):
    r = np.abs(np.asarray(residual, dtype=np.float64))
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def normalize_values(values, fail_open=True):
    """Min-max scale over the last two axes.

    Constant maps become all ones (so nothing downstream is masked away), or
    all zeros when ``fail_open`` is off.
    """
    v = np.asarray(values, dtype=np.float64)
    lo = v.min(axis=(-2, -1), keepdims=True)
    hi = v.max(axis=(-2, -1), keepdims=True)
    span = hi - lo
    flat = span <= 0
    out = (v - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 1.0 if fail_open else 0.0, out)


def normalize_heatmap(h, fail_open=True):
    if h.normalized:
        return Heatmap(h.values.copy(), normalized=True)
    return Heatmap(normalize_values(h.values, fail_open), normalized=True)


def mix_values(h_class, h_bbox, lam):
    return lam * h_class + (1.0 - lam) * h_bbox


def mix_heatmaps(h_class, h_bbox, cfg=MixConfig(), renormalize=True):
    """Blend two normalized maps with weight ``cfg.lam`` on the class map."""
    if h_class.values.shape != h_bbox.values.shape:
        raise ShapeError(f"mix_heatmaps: extent mismatch {h_class.values.shape} vs {h_bbox.values.shape}")
    hc = normalize_heatmap(h_class).values
    hb = normalize_heatmap(h_bbox).values
    mixed = Heatmap(mix_values(hc, hb, cfg.lam))
    return normalize_heatmap(mixed) if renormalize else mixed


# -- cheap exact derivatives for scores evaluated at a few locations ----------

def point_derivatives(vectors, score_fn):
    """Diagonal derivatives of a row-separable score w.r.t. feature vectors.

    ``vectors`` is (n, K): the activation vectors at the locations a score
    reads. ``score_fn(x, rows)`` must return a scalar that is a sum of
    per-row terms, where ``x`` is (m, K) and ``rows[r]`` names the original
    row that ``x[r]`` copies.

    The K channels are probed together by evaluating the score on K stacked
    copies of the rows and probing channel r only in copy r, so one reverse
    pass per order suffices. Returns ``(first, alpha)`` each of shape (n, K).
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    n, k = vectors.shape
    if n == 0:
        return np.zeros((0, k)), np.zeros((0, k))
    stacked = tensor(np.broadcast_to(vectors, (k, n, k)).copy(), requires_grad=True)
    rows = np.tile(np.arange(n), k)
    score = score_fn(stacked.reshape(k * n, k), rows)
    probe = np.zeros((k, n, k))
    probe[np.arange(k), :, np.arange(k)] = 1.0
    d1, d2, d3 = diagonal_derivatives(score, stacked, 3, groups=[probe], create_graph=False)
    pick = np.arange(k)
    first = d1.data[0]
    alpha = (d2.data + d3.data)[pick, :, pick].T
    return first, alpha


def scatter_points(values, batch, rows, cols, shape):
    """Sum per-point (n, K) values into a (B, K, H, W) array."""
    out = np.zeros(shape)
    np.add.at(out, (batch, slice(None), rows, cols), values)
    return out


# -- distilled predictor used at inference -----------------------------------

class HeatmapPredictor(Module):
    """1x1 convolution over features followed by a sigmoid, one map per output."""

    def __init__(self, rng, channels, n_maps=1):
        self.conv = Conv2d(rng, channels, n_maps, 1)

    def __call__(self, features):
        return self.conv(features).sigmoid()


def distillation_loss(predictor, features, target):
    """Mean-squared error between predicted maps and a fixed target (B, n_maps, H, W)."""
    pred = predictor(features)
    target = np.asarray(target.values if isinstance(target, Heatmap) else target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeError(f"distillation target {target.shape} does not match prediction {pred.shape}")
    return mse(pred, target)


def train_heatmap_predictor(predictor, features, target, steps=1, lr=1e-2, optimizer=None):
    """Fit ``predictor`` toward ``target`` for ``steps`` Adam updates; returns the loss history."""
    from .autodiff import grad

    params = predictor.parameters()
    opt = optimizer or Adam(params, lr=lr)
    feats = features if isinstance(features, Tensor) else Tensor(features)
    history = []
    for _ in range(steps):
        loss = distillation_loss(predictor, feats, target)
        history.append(loss.item())
        opt.step(grad(loss, params))
    return history
