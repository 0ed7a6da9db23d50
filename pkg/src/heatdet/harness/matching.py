"""Minimum-cost assignment of predictions to ground-truth objects."""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import pairwise_giou

CLASS_WEIGHT, L1_WEIGHT, GIOU_WEIGHT = 1.0, 5.0, 2.0


@dataclass
class Assignment:
    pred_index: np.ndarray
    truth_index: np.ndarray
    cost: float

    def background(self, n_pred):
        keep = np.ones(n_pred, bool)
        keep[self.pred_index] = False
        return np.flatnonzero(keep)


def match_cost(probs, boxes, labels, truth_boxes):
    """(n_pred, n_truth) cost: -p(label) + L1 box distance - generalized IoU, weighted."""
    probs = np.asarray(probs, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    if len(labels) == 0 or len(boxes) == 0:
        return np.zeros((len(boxes), len(labels)))
    cls = -probs[:, np.asarray(labels, dtype=int)]
    l1 = np.abs(boxes[:, None, :] - np.asarray(truth_boxes)[None, :, :]).sum(-1)
    giou = pairwise_giou(boxes, truth_boxes)
    return CLASS_WEIGHT * cls + L1_WEIGHT * l1 - GIOU_WEIGHT * giou


def hungarian_match(cost):
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return Assignment(np.zeros(0, int), np.zeros(0, int), 0.0)
    rows, cols = linear_sum_assignment(cost)
    return Assignment(rows.astype(int), cols.astype(int), float(cost[rows, cols].sum()))


def exhaustive_match(cost):
    """Brute-force minimum over every injective assignment; for small checks only."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment(np.zeros(0, int), np.zeros(0, int), 0.0)
    best = None
    if n >= m:
        for rows in itertools.permutations(range(n), m):
            c = sum(cost[r, j] for j, r in enumerate(rows))
            if best is None or c < best[0]:
                best = (c, np.array(rows), np.arange(m))
    else:
        for cols in itertools.permutations(range(m), n):
            c = sum(cost[i, col] for i, col in enumerate(cols))
            if best is None or c < best[0]:
                best = (c, np.arange(n), np.array(cols))
    order = np.argsort(best[1])
    return Assignment(best[1][order], best[2][order], float(best[0]))
