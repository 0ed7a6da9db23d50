"""Set-prediction loss with the auxiliary terms that train the heatmap machinery."""
import numpy as np

from ..autodiff import Tensor
from ..autodiff.functional import huber, log_softmax, mse
from ..decoder import DecoderOutput
from ..lsconv import continuity_penalty
from ..model import teacher_stack
from .boxes import giou_tensor
from .matching import GIOU_WEIGHT, L1_WEIGHT, hungarian_match, match_cost

BACKGROUND_WEIGHT = 0.1
DENSE_BACKGROUND_WEIGHT = 0.05
BOX_DELTA = 0.02


def _softmax_np(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def assign(output, truths):
    """Hungarian assignment per image; returns (batch, query, truth) index arrays of matched pairs."""
    probs = _softmax_np(output.logits.data)
    boxes = output.boxes.data
    bi, qi, ti = [], [], []
    for b, (tb, tl) in enumerate(truths):
        valid = np.flatnonzero(output.valid[b])
        if len(tl) == 0 or len(valid) == 0:
            continue
        cost = match_cost(probs[b, valid], boxes[b, valid], tl, tb)
        a = hungarian_match(cost)
        bi.extend([b] * len(a.pred_index))
        qi.extend(valid[a.pred_index])
        ti.extend(a.truth_index)
    return np.array(bi, dtype=np.int64), np.array(qi, dtype=np.int64), np.array(ti, dtype=np.int64)


def set_losses(output, truths, nc):
    """Classification, box and overlap terms for the decoder output."""
    bi, qi, ti = assign(output, truths)
    b, m, _ = output.logits.shape
    target = np.full((b, m), nc, dtype=np.int64)
    weight = np.where(output.valid, BACKGROUND_WEIGHT, 0.0)
    labels = np.array([truths[x][1][t] for x, t in zip(bi, ti)], dtype=np.int64)
    target[bi, qi] = labels
    weight[bi, qi] = 1.0
    logp = log_softmax(output.logits, axis=-1)
    bb, mm = np.meshgrid(np.arange(b), np.arange(m), indexing="ij")
    picked = logp[bb.reshape(-1), mm.reshape(-1), target.reshape(-1)]
    ce = -(picked * Tensor(weight.reshape(-1))).sum() * (1.0 / max(weight.sum(), 1e-12))
    parts = {"ce": ce}
    if len(bi):
        pred = output.boxes[bi, qi]
        truth = Tensor(np.stack([truths[x][0][t] for x, t in zip(bi, ti)]))
        n = float(len(bi))
        parts["box"] = (huber(pred - truth, BOX_DELTA) * (L1_WEIGHT / BOX_DELTA)).sum() * (1.0 / n)
        parts["giou"] = ((1.0 - giou_tensor(pred, truth)) * GIOU_WEIGHT).sum() * (1.0 / n)
    else:
        parts["box"] = parts["giou"] = Tensor(0.0)
    return parts, (bi, qi, ti)


def dense_losses(result, targets, nc):
    """Per-cell classification and center-cell box regression for the dense heads."""
    logits, boxes = result.dense_logits, result.dense_boxes
    b, _, h, w = logits.shape
    target = np.full((b, h, w), nc, dtype=np.int64)
    weight = np.full((b, h, w), DENSE_BACKGROUND_WEIGHT)
    target[targets.batch, targets.rows, targets.cols] = targets.labels
    weight[targets.batch, targets.rows, targets.cols] = 1.0
    logp = log_softmax(logits.transpose(0, 2, 3, 1), axis=-1)
    ib, ih, iw = np.meshgrid(np.arange(b), np.arange(h), np.arange(w), indexing="ij")
    picked = logp[ib.reshape(-1), ih.reshape(-1), iw.reshape(-1), target.reshape(-1)]
    ce = -(picked * Tensor(weight.reshape(-1))).sum() * (1.0 / weight.sum())
    if len(targets.labels):
        pred = boxes[targets.batch, :, targets.rows, targets.cols]
        reg = huber(pred - Tensor(targets.cell_boxes), 1.0).sum() * (1.0 / len(targets.labels))
    else:
        reg = Tensor(0.0)
    return ce, reg


def detection_loss(model, result, targets):
    """Total loss and its named parts (tensors)."""
    cfg = model.cfg
    out = result.output
    parts, matches = set_losses(out, targets.per_image, cfg.classes)
    if out.aux:
        # every earlier decoder layer is matched and scored on its own
        aux = None
        for logits, boxes in out.aux:
            layer, _ = set_losses(DecoderOutput(logits, boxes, out.valid), targets.per_image, cfg.classes)
            for v in layer.values():
                aux = v if aux is None else aux + v
        parts["aux"] = aux
    parts["dense_ce"], parts["dense_box"] = dense_losses(result, targets, cfg.classes)
    parts["distill"] = mse(result.predicted, teacher_stack(result.maps))
    if result.offsets is not None:
        parts["continuity"] = continuity_penalty(result.offsets) * cfg.continuity_weight
    total = None
    for v in parts.values():
        total = v if total is None else total + v
    return total, parts, matches
