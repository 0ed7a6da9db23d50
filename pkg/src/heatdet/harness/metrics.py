"""Average precision with all-point interpolation."""
from dataclasses import dataclass, field

import numpy as np

from .boxes import pairwise_iou

IOU_THRESHOLDS = np.round(np.arange(0.5, 0.96, 0.05), 2)


@dataclass
class EvalReport:
    map50: float
    map: float
    per_class_ap: dict = field(default_factory=dict)
    detection_count: int = 0
    config_digest: str = ""


def average_precision(scores, matched, n_truth):
    """Area under the interpolated precision-recall curve.

    ``matched`` flags true positives in the order of ``scores`` (any order;
    sorted here, stable on ties).
    """
    if n_truth == 0:
        return float("nan")
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(matched, dtype=np.float64)[order]
    ctp = np.cumsum(tp)
    recall = ctp / n_truth
    precision = ctp / np.arange(1, len(tp) + 1)
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1]
    steps = np.flatnonzero(r[1:] != r[:-1])
    return float(((r[steps + 1] - r[steps]) * p[steps + 1]).sum())


def greedy_matches(dets, truths, iou_thr):
    """Per image, highest score first: each detection takes the best unclaimed truth."""
    flags, scores = [], []
    for (boxes, sc), gt in zip(dets, truths):
        order = np.argsort(-np.asarray(sc), kind="stable")
        claimed = np.zeros(len(gt), bool)
        iou = pairwise_iou(np.asarray(boxes).reshape(-1, 4), np.asarray(gt).reshape(-1, 4)) if len(gt) and len(boxes) else None
        for i in order:
            ok = False
            if iou is not None:
                cand = np.where(claimed, -1.0, iou[i])
                j = int(cand.argmax())
                if cand[j] >= iou_thr:
                    claimed[j] = True
                    ok = True
            flags.append(ok)
            scores.append(sc[i])
    return np.array(scores, dtype=np.float64), np.array(flags, bool)


def class_ap(dets, truths, iou_thr):
    n_truth = sum(len(g) for g in truths)
    scores, flags = greedy_matches(dets, truths, iou_thr)
    return average_precision(scores, flags, n_truth)


def evaluate_detections(predictions, truths, classes):
    """``predictions``: per image list of (box, label, score); ``truths``: per image (boxes, labels)."""
    per_class = {}
    grid = np.zeros((classes, len(IOU_THRESHOLDS)))
    count = 0
    for k in range(classes):
        dets, gts = [], []
        for preds, (tb, tl) in zip(predictions, truths):
            sel = [p for p in preds if p[1] == k]
            count += len(sel)
            dets.append((np.array([p[0] for p in sel]).reshape(-1, 4), np.array([p[2] for p in sel])))
            gts.append(np.asarray(tb).reshape(-1, 4)[np.asarray(tl) == k])
        for t, thr in enumerate(IOU_THRESHOLDS):
            grid[k, t] = class_ap(dets, gts, thr)
        per_class[k] = float(grid[k, 0])
    present = ~np.isnan(grid[:, 0])
    if not present.any():
        return EvalReport(0.0, 0.0, per_class, count)
    return EvalReport(
        map50=float(grid[present, 0].mean()),
        map=float(grid[present].mean()),
        per_class_ap=per_class,
        detection_count=count,
    )


def exhaustive_ap(scores, ious, iou_thr):
    """Single-image, single-class AP recomputed by brute force.

    Matching is an explicit loop over detections in score order and truths
    in index order; precision and recall are counted afresh at every cutoff
    and the interpolated precision at each recall level is a max over all
    later points.
    """
    n_det, n_truth = ious.shape
    if n_truth == 0:
        return float("nan")
    order = sorted(range(n_det), key=lambda i: (-scores[i], i))
    claimed, tp = set(), []
    for i in order:
        best, best_j = -1.0, None
        for j in range(n_truth):
            if j not in claimed and ious[i, j] > best:
                best, best_j = ious[i, j], j
        ok = best_j is not None and best >= iou_thr
        if ok:
            claimed.add(best_j)
        tp.append(ok)
    # precision/recall at each cutoff, then interpolated area by brute force
    points = []
    for cut in range(1, n_det + 1):
        hits = sum(tp[:cut])
        points.append((hits / n_truth, hits / cut))
    area, prev_r = 0.0, 0.0
    recalls = sorted({r for r, _ in points})
    for r in recalls:
        p_interp = max(p for rr, p in points if rr >= r)
        area += (r - prev_r) * p_interp
        prev_r = r
    return area
