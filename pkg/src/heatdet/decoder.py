"""Query retrieval from the mixed heatmap and a deformable-attention decoder."""
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, bilinear_sample, concat, stack
from .autodiff.functional import inverse_sigmoid, softmax
from .autodiff.nn import FeedForward, LayerNorm, Linear, Module, Parameter
from .encoder import ConfigError, MultiHeadAttention
from .heatmap import Heatmap


class EmptyQueryError(RuntimeError):
    pass


@dataclass
class QuerySet:
    queries: Tensor        # (B, M, D); padded rows are zeros of the projection
    anchors: object        # (B, M, 2) normalized (x, y)
    source_scores: np.ndarray
    token_index: np.ndarray
    valid: np.ndarray      # (B, M) bool

    @property
    def count(self):
        return self.valid.sum(axis=1)


@dataclass
class Detection:
    box: np.ndarray        # (cx, cy, w, h) in [0, 1]
    label: int
    score: float
    class_logits: np.ndarray


@dataclass
class DecoderOutput:
    logits: Tensor         # (B, M, classes + 1), last column is background
    boxes: Tensor          # (B, M, 4)
    valid: np.ndarray
    aux: list = field(default_factory=list)   # (logits, boxes) after each earlier layer


def rank_tokens(h, mask, budget):
    """Indices of mask-passing tokens by descending score, ties by row-major index."""
    flat_h = np.asarray(h, dtype=np.float64).reshape(-1)
    passing = np.flatnonzero(np.asarray(mask).reshape(-1) > 0)
    order = np.argsort(-flat_h[passing], kind="stable")
    return passing[order][:budget]


def token_centers(index, height, width):
    rows, cols = np.divmod(index, width)
    return np.stack([(cols + 0.5) / width, (rows + 0.5) / height], axis=-1)


def select_queries(e_mixed, h_mixed, mask, budget, projection):
    """Top-``budget`` mask-passing tokens of each image, projected into queries.

    ``e_mixed`` is (B, H*W, D); ``h_mixed`` and ``mask`` are (B, H, W).
    Images with fewer passing tokens yield fewer valid queries; rows are
    padded up to the largest selection in the batch.
    """
    hv = h_mixed.values if isinstance(h_mixed, Heatmap) else np.asarray(h_mixed, dtype=np.float64)
    hv = hv[None] if hv.ndim == 2 else hv
    mask = np.asarray(mask)
    mask = mask[None] if mask.ndim == 2 else mask
    b, h, w = hv.shape
    picks = [rank_tokens(hv[i], mask[i], budget) for i in range(b)]
    empty = [i for i, p in enumerate(picks) if len(p) == 0]
    if empty:
        raise EmptyQueryError(f"no token passes the mask in batch items {empty}")
    m = max(len(p) for p in picks)
    index = np.zeros((b, m), dtype=np.int64)
    valid = np.zeros((b, m), dtype=bool)
    scores = np.zeros((b, m))
    for i, p in enumerate(picks):
        index[i, :len(p)] = p
        valid[i, :len(p)] = True
        scores[i, :len(p)] = hv[i].reshape(-1)[p]
    tokens = e_mixed[np.arange(b)[:, None], index]
    return QuerySet(
        queries=projection(tokens), anchors=Tensor(token_centers(index, h, w)),
        source_scores=scores, token_index=index, valid=valid,
    )


def _offset_bias(heads, points):
    # each head starts looking in its own direction, farther for later points
    bias = np.zeros((heads, points, 2))
    for hd in range(heads):
        ang = 2 * np.pi * hd / heads
        for p in range(points):
            bias[hd, p] = (p + 1) * 0.5 * np.array([np.cos(ang), np.sin(ang)])
    return bias.reshape(-1)


class DeformableAttention(Module):
    """Each query reads ``points`` bilinear samples per head around its anchor."""

    def __init__(self, rng, dim, heads=4, points=4):
        if dim % heads:
            raise ConfigError(f"model dimension {dim} is not divisible by {heads} heads")
        self.heads, self.points = heads, points
        self.value = Linear(rng, dim, dim)
        self.offsets = Linear(rng, dim, heads * points * 2)
        self.offsets.weight.data[:] = 0.0
        self.offsets.bias.data = _offset_bias(heads, points)
        self.weights = Linear(rng, dim, heads * points)
        self.out = Linear(rng, dim, dim)

    def sample(self, queries, anchors, memory, height, width):
        """Aggregated samples before the output projection; returns (B, M, D) and the weights."""
        b, m, d = queries.shape
        nh, p, dh = self.heads, self.points, d // self.heads
        vmap = self.value(memory).reshape(b, height, width, nh, dh).transpose(0, 3, 4, 1, 2)
        vmap = vmap.reshape(b * nh, dh, height, width)
        off = self.offsets(queries).reshape(b, m, nh, p, 2)
        attn = softmax(self.weights(queries).reshape(b, m, nh, p), axis=-1)
        anchors = anchors if isinstance(anchors, Tensor) else Tensor(anchors)
        ax = (anchors[:, :, 0] * float(width) - 0.5).reshape(b, m, 1, 1).expand((b, m, nh, p))
        ay = (anchors[:, :, 1] * float(height) - 0.5).reshape(b, m, 1, 1).expand((b, m, nh, p))
        px = (ax + off[..., 0]).transpose(0, 2, 1, 3).reshape(b * nh, m * p)
        py = (ay + off[..., 1]).transpose(0, 2, 1, 3).reshape(b * nh, m * p)
        s = bilinear_sample(vmap, px, py).reshape(b, nh, dh, m, p)
        wts = attn.transpose(0, 2, 1, 3).reshape(b, nh, 1, m, p).expand((b, nh, dh, m, p))
        agg = (s * wts).sum(axis=-1).transpose(0, 3, 1, 2).reshape(b, m, d)
        return agg, attn

    def __call__(self, queries, anchors, memory, height, width):
        agg, _ = self.sample(queries, anchors, memory, height, width)
        return queries + self.out(agg)


class DecoderLayer(Module):
    def __init__(self, rng, dim, heads=4, points=4, hidden=None):
        self.self_attn = MultiHeadAttention(rng, dim, heads)
        self.norm1 = LayerNorm(dim)
        self.cross = DeformableAttention(rng, dim, heads, points)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, hidden or 2 * dim)
        self.norm3 = LayerNorm(dim)

    def __call__(self, q, anchors, memory, height, width, valid=None):
        a, _ = self.self_attn(q, key_mask=valid)
        q = self.norm1(q + a)
        q = self.norm2(self.cross(q, anchors, memory, height, width))
        return self.norm3(q + self.ffn(q))


class DetectionHeads(Module):
    def __init__(self, rng, dim, classes, anchor_size=0.15):
        self.classes = classes
        self.anchor_size = anchor_size
        self.cls = Linear(rng, dim, classes + 1)
        self.box = FeedForward(rng, dim, dim)
        self.box_out = Linear(rng, dim, 4)
        self.box_out.weight.data[:] = 0.0

    def __call__(self, q, anchors):
        b, m, _ = q.shape
        anchors = anchors if isinstance(anchors, Tensor) else Tensor(anchors)
        size = Tensor(np.full((b, m, 2), inverse_sigmoid(np.array(self.anchor_size))))
        base = concat([_logit(anchors.clip(1e-5, 1 - 1e-5)), size], axis=-1)
        delta = self.box_out(self.box(q).relu())
        return self.cls(q), (base + delta).sigmoid()


def _logit(p):
    return (p / (1.0 - p)).log()


class Decoder(Module):
    def __init__(self, rng, dim, classes, depth=3, heads=4, points=4, hidden=None):
        if depth < 0:
            raise ConfigError(f"decoder depth must be >= 0, got {depth}")
        self.layers = [DecoderLayer(rng, dim, heads, points, hidden) for _ in range(depth)]
        self.heads = DetectionHeads(rng, dim, classes)

    def stack_parameters(self):
        return sum(layer.num_parameters() for layer in self.layers)

    def __call__(self, queries, anchors, memory, height, width, valid=None, aux_outputs=False):
        """``aux_outputs`` also applies the shared heads after every layer but the last."""
        q, aux = queries, []
        for k, layer in enumerate(self.layers):
            q = layer(q, anchors, memory, height, width, valid)
            if aux_outputs and k < len(self.layers) - 1:
                aux.append(self.heads(q, anchors))
        logits, boxes = self.heads(q, anchors)
        b, m = logits.shape[:2]
        valid = np.ones((b, m), bool) if valid is None else np.asarray(valid, bool)
        return DecoderOutput(logits, boxes, valid, aux)


def decoder_forward(decoder, query_set, memory):
    return decoder(query_set.queries, query_set.anchors, memory.values,
                   memory.height, memory.width, query_set.valid)


def to_detections(output):
    """Per-image lists of detections; the label is the best foreground class."""
    logits = output.logits.data
    prob = np.exp(logits - logits.max(-1, keepdims=True))
    prob /= prob.sum(-1, keepdims=True)
    result = []
    for b in range(logits.shape[0]):
        dets = []
        for m in np.flatnonzero(output.valid[b]):
            fg = prob[b, m, :-1]
            k = int(fg.argmax())
            dets.append(Detection(box=output.boxes.data[b, m].copy(), label=k,
                                  score=float(fg[k]), class_logits=logits[b, m].copy()))
        result.append(dets)
    return result
