"""The full detector: backbone, heatmaps, masked position codes, encoder, retrieval, decoder."""
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, conv2d
from .autodiff.functional import avg_pool2d, huber, inverse_sigmoid
from .autodiff.nn import Conv2d, Linear, Module, Parameter
from .decoder import Decoder, select_queries
from .encoder import Encoder, build_embeddings
from .heatmap import (
    HeatmapPredictor, MixConfig, class_heatmap, compute_beta, mix_values, normalize_values,
    point_derivatives, scatter_points,
)
from .lsconv import LSConv
from .posmask import masked_pe, threshold_mask

STRIDE = 4
MAP_NAMES = ("class", "bbox", "mixed")


@dataclass
class Targets:
    """Ground truth flattened to object rows, with the feature cell holding each center."""
    batch: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray        # (n, 4) normalized (cx, cy, w, h)
    cell_boxes: np.ndarray   # (n, 4) center offset within the cell and size, in cells
    per_image: list

    @classmethod
    def build(cls, boxes, labels, height, width):
        b_idx, rr, cc, lab, bx, cell = [], [], [], [], [], []
        for b, (bb, ll) in enumerate(zip(boxes, labels)):
            for box, lb in zip(np.asarray(bb).reshape(-1, 4), ll):
                j = min(int(box[0] * width), width - 1)
                i = min(int(box[1] * height), height - 1)
                b_idx.append(b), rr.append(i), cc.append(j), lab.append(int(lb)), bx.append(box)
                cell.append([box[0] * width - j - 0.5, box[1] * height - i - 0.5, box[2] * width, box[3] * height])
        as_int = lambda v: np.array(v, dtype=np.int64)
        return cls(as_int(b_idx), as_int(rr), as_int(cc), as_int(lab),
                   np.array(bx, dtype=np.float64).reshape(-1, 4),
                   np.array(cell, dtype=np.float64).reshape(-1, 4),
                   [(np.asarray(bb).reshape(-1, 4), np.asarray(ll)) for bb, ll in zip(boxes, labels)])


@dataclass
class ForwardResult:
    output: object
    features: Tensor
    offsets: object
    predicted: Tensor        # (B, 3, H, W) distilled maps
    maps: dict               # normalized (B, H, W) arrays used in this pass
    mask: np.ndarray
    queries: object
    dense_logits: Tensor = None
    dense_boxes: Tensor = None


class PositiveReadout(Module):
    """1x1 convolution whose weights are softplus(raw), so every channel can only excite a logit.

    With signed weights, ReLU filtering of the gradient drops the inhibitory
    channels and the resulting map stops being centred on objects.
    """

    def __init__(self, rng, c_in, c_out, balanced=False):
        self.raw = Parameter(rng.normal(-3.0, 0.5, size=(c_out, c_in)))
        self.bias = Parameter(np.zeros(c_out))
        self.balanced = balanced
        if balanced:
            self.log_gain = Parameter(np.array([np.log(0.25)]))

    def weight(self):
        w = (self.raw.exp() + 1.0).log()
        if not self.balanced:
            return w
        # every row gets the same L2 norm, set by one shared gain
        out, c_in = self.raw.shape
        norm = ((w * w).sum(axis=1, keepdims=True) ** 0.5).expand((out, c_in))
        return w / norm * self.log_gain.exp().reshape(1, 1).expand((out, c_in))

    def weight_array(self):
        w = np.logaddexp(0.0, self.raw.data)
        if self.balanced:
            w = w / np.linalg.norm(w, axis=1, keepdims=True) * np.exp(self.log_gain.data[0])
        return w

    def __call__(self, x):
        b, _, h, w = x.shape
        out = self.raw.shape[0]
        y = conv2d(x, self.weight().reshape(out, self.raw.shape[1], 1, 1))
        return y + self.bias.reshape(1, out, 1, 1).expand((b, out, h, w))


def _pointwise(conv):
    """A 1x1 convolution as a constant (in, out) matrix and bias, for row vectors."""
    if isinstance(conv, PositiveReadout):
        return Tensor(conv.weight_array().T.copy()), Tensor(conv.bias.data.copy())
    return Tensor(conv.weight.data[:, :, 0, 0].T.copy()), Tensor(conv.bias.data.copy())


class Detector(Module):
    def __init__(self, cfg, rng=None):
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.cfg = cfg
        c, nc = cfg.width, cfg.classes
        self.conv1 = Conv2d(rng, 3, c // 2, 3)
        self.conv2 = Conv2d(rng, c // 2, c, 3)
        self.conv3 = Conv2d(rng, c, c, 3)
        self.lsconv = LSConv(rng, c, c) if cfg.lsconv_enabled else None
        self.cls_hidden = Conv2d(rng, c, c, 1) if cfg.class_head == "mlp" else None
        self.cls_out = Conv2d(rng, c, nc + 1, 1) if cfg.class_head == "mlp" else PositiveReadout(
            rng, c, nc + 1, balanced=cfg.class_head == "balanced")
        self.box_hidden = Conv2d(rng, c, c, 1) if cfg.box_head == "mlp" else None
        self.box_out = Conv2d(rng, c, 4, 1)
        self.predictor = HeatmapPredictor(rng, c, len(MAP_NAMES))
        dim = 2 * c
        self.encoder = Encoder(rng, dim, cfg.heads, cfg.encoder_depth)
        if cfg.hqr_enabled:
            self.query_proj = Linear(rng, dim, dim)
        else:
            m = cfg.query_budget
            self.query_embed = Parameter(rng.normal(0.0, 1.0, size=(m, dim)))
            self.anchor_logits = Parameter(inverse_sigmoid(rng.uniform(0.05, 0.95, size=(m, 2))))
        self.decoder = Decoder(rng, dim, nc, cfg.decoder_depth, cfg.heads, cfg.points)

    # -- backbone and dense heads ---------------------------------------------
    def features(self, images):
        x = images if isinstance(images, Tensor) else Tensor(images)
        x = avg_pool2d(self.conv1(x).relu())
        x = avg_pool2d(self.conv2(x).relu())
        x = self.conv3(x).relu()
        offsets = None
        if self.lsconv is not None:
            y, offsets = self.lsconv(x)
            x = x + y
        if self.cfg.bounded_features:
            # saturating features keep confident objects at comparable heatmap heights
            x = x.relu().tanh()
        return x, offsets

    def dense_heads(self, a):
        hid = self.cls_hidden(a).tanh() if self.cls_hidden is not None else a * a * 0.5
        box_in = self.box_hidden(a).tanh() if self.box_hidden is not None else a * a * 0.5
        return self.cls_out(hid), self.box_out(box_in)

    # -- gradient-derived heatmaps (training only) ----------------------------
    def teacher_heatmaps(self, a, targets):
        """Class, box and mixed maps (B, H, W) from derivatives of the dense heads.

        The class score is the logit of each object's label at its center
        cell; the box score is the Huber regression loss there. Both read the
        feature vector at a single cell, so all channels are probed at once.
        """
        a_np = a.data
        b, c, h, w = a_np.shape
        vecs = a_np[targets.batch, :, targets.rows, targets.cols]
        w1c, b1c = _pointwise(self.cls_hidden) if self.cls_hidden is not None else (None, None)
        w2c, b2c = _pointwise(self.cls_out)

        w1b, b1b = _pointwise(self.box_hidden) if self.box_hidden is not None else (None, None)
        w2b, b2b = _pointwise(self.box_out)
        labels, cell = targets.labels, targets.cell_boxes
        delta = self.cfg.huber_delta

        def class_score(x, rows):
            n = x.shape[0]
            if w1c is not None:
                hid = (x @ w1c + b1c.reshape(1, -1).expand((n, c))).tanh()
            else:
                hid = x * x * 0.5
            logits = hid @ w2c + b2c.reshape(1, -1).expand((n, w2c.shape[1]))
            return logits[np.arange(n), labels[rows]].sum()

        def box_loss(x, rows):
            if w1b is not None:
                hid = (x @ w1b + b1b.reshape(1, -1).expand((x.shape[0], c))).tanh()
            else:
                hid = x * x * 0.5
            pred = hid @ w2b + b2b.reshape(1, -1).expand((x.shape[0], 4))
            return huber(pred - Tensor(cell[rows]), delta).sum()

        maps = {}
        for name, fn in (("class", class_score), ("bbox", box_loss)):
            if len(vecs):
                first, alpha = point_derivatives(vecs, fn)
            else:
                first = alpha = np.zeros((0, c))
            pts = (targets.batch, targets.rows, targets.cols)
            beta = compute_beta(scatter_points(alpha, *pts, a_np.shape), scatter_points(first, *pts, a_np.shape))
            maps[name] = normalize_values(class_heatmap(a_np, beta).values)
        cfg = MixConfig(self.cfg.lam, self.cfg.huber_delta)
        maps["mixed"] = normalize_values(mix_values(maps["class"], maps["bbox"], cfg.lam))
        return maps

    def predicted_heatmaps(self, a):
        pred = self.predictor(a.detach())
        return pred, {name: normalize_values(pred.data[:, k]) for k, name in enumerate(MAP_NAMES)}

    # -- full pass ------------------------------------------------------------
    def __call__(self, images, targets=None, train=True):
        cfg = self.cfg
        a, offsets = self.features(images)
        b, c, h, w = a.shape
        pred, maps = self.predicted_heatmaps(a)
        dense_logits = dense_boxes = None
        if train:
            if targets is None:
                raise ValueError("training pass needs targets")
            dense_logits, dense_boxes = self.dense_heads(a)
            maps = self.teacher_heatmaps(a, targets)
        mask = threshold_mask(maps["mixed"], cfg.tau)
        if cfg.mohfe_enabled:
            fused = build_embeddings(a, maps["class"], maps["bbox"], masked_pe(mask, c))
        else:
            ones = np.ones((b, h, w))
            fused = build_embeddings(a, ones, ones, masked_pe(ones, c))
        memory = self.encoder(fused)
        if cfg.hqr_enabled:
            weight = Tensor(np.repeat(maps["mixed"].reshape(b, h * w, 1), memory.values.shape[-1], axis=2))
            qs = select_queries(memory.values * weight, maps["mixed"], mask, cfg.query_budget, self.query_proj)
            queries, anchors, valid = qs.queries, qs.anchors, qs.valid
        else:
            m, d = self.query_embed.shape
            queries = self.query_embed.reshape(1, m, d).expand((b, m, d))
            anchors = self.anchor_logits.sigmoid().reshape(1, m, 2).expand((b, m, 2))
            valid, qs = np.ones((b, m), bool), None
        out = self.decoder(queries, anchors, memory.values, h, w, valid, aux_outputs=train)
        return ForwardResult(out, a, offsets, pred, maps, mask, qs, dense_logits, dense_boxes)


def teacher_stack(maps):
    return np.stack([maps[name] for name in MAP_NAMES], axis=1)

