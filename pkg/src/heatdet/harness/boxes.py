"""Box conversions and overlap measures, in numpy and as differentiable ops."""
import numpy as np

from ..autodiff import maximum, minimum, stack


def cxcywh_to_xyxy(b):
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def pairwise_iou(a, b):
    """IoU between every box of ``a`` (n, 4) and ``b`` (m, 4), both (cx, cy, w, h)."""
    a, b = cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def pairwise_giou(a, b):
    ax, bx = cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)
    iou = pairwise_iou(a, b)
    area_a = (ax[:, 2] - ax[:, 0]) * (ax[:, 3] - ax[:, 1])
    area_b = (bx[:, 2] - bx[:, 0]) * (bx[:, 3] - bx[:, 1])
    lt = np.maximum(ax[:, None, :2], bx[None, :, :2])
    rb = np.minimum(ax[:, None, 2:], bx[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    hull = np.maximum(ax[:, None, 2:], bx[None, :, 2:]) - np.minimum(ax[:, None, :2], bx[None, :, :2])
    hull_area = hull[..., 0] * hull[..., 1]
    return iou - (hull_area - union) / np.where(hull_area > 0, hull_area, 1)


def giou_tensor(pred, target):
    """Matched-pair generalized IoU for (n, 4) tensors in (cx, cy, w, h)."""
    def corners(t):
        cx, cy, w, h = t[:, 0], t[:, 1], t[:, 2], t[:, 3]
        return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5

    px0, py0, px1, py1 = corners(pred)
    tx0, ty0, tx1, ty1 = corners(target)
    iw = (minimum(px1, tx1) - maximum(px0, tx0)).relu()
    ih = (minimum(py1, ty1) - maximum(py0, ty0)).relu()
    inter = iw * ih
    union = pred[:, 2] * pred[:, 3] + target[:, 2] * target[:, 3] - inter
    hw = maximum(px1, tx1) - minimum(px0, tx0)
    hh = maximum(py1, ty1) - minimum(py0, ty0)
    hull = hw * hh
    return inter / union - (hull - union) / hull
