"""Numpy reference for the bilinear sampling kernels.

Coordinates are in pixel units: ``x`` indexes columns, ``y`` rows. Samples
outside the map are clamped to the border (replicate padding), so the
coordinate gradient is zero wherever the clamp is active.
"""
import numpy as np


def _corners(x, y, height, width):
    xc = np.clip(x, 0.0, width - 1.0)
    yc = np.clip(y, 0.0, height - 1.0)
    x0 = np.minimum(np.floor(xc), max(width - 2, 0))
    y0 = np.minimum(np.floor(yc), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = xc - x0
    wy = yc - y0
    x0, x1, y0, y1 = (a.astype(np.intp) for a in (x0, x1, y0, y1))
    idx = (y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1)
    return idx, wx, wy


def _take(flat, idx):
    return np.take_along_axis(flat, idx[:, None, :], axis=2)


def bilinear_forward(value, x, y):
    n, c, h, w = value.shape
    flat = value.reshape(n, c, h * w)
    (i00, i01, i10, i11), wx, wy = _corners(x, y, h, w)
    wx = wx[:, None, :]
    wy = wy[:, None, :]
    return ((1 - wx) * (1 - wy) * _take(flat, i00)
            + wx * (1 - wy) * _take(flat, i01)
            + (1 - wx) * wy * _take(flat, i10)
            + wx * wy * _take(flat, i11))


def bilinear_backward(grad_out, value, x, y):
    n, c, h, w = value.shape
    hw = h * w
    flat = value.reshape(n, c, hw)
    (i00, i01, i10, i11), wx, wy = _corners(x, y, h, w)
    wx3 = wx[:, None, :]
    wy3 = wy[:, None, :]

    base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * hw
    weights = ((1 - wx3) * (1 - wy3), wx3 * (1 - wy3), (1 - wx3) * wy3, wx3 * wy3)
    index = np.concatenate([(base + i[:, None, :]).ravel() for i in (i00, i01, i10, i11)])
    contrib = np.concatenate([(grad_out * wt).ravel() for wt in weights])
    grad_value = np.bincount(index, weights=contrib, minlength=n * c * hw).reshape(value.shape)

    f00, f01, f10, f11 = (_take(flat, i) for i in (i00, i01, i10, i11))
    in_x = ((x > 0) & (x < w - 1))
    in_y = ((y > 0) & (y < h - 1))
    dx = (1 - wy3) * (f01 - f00) + wy3 * (f11 - f10)
    dy = (1 - wx3) * (f10 - f00) + wx3 * (f11 - f01)
    grad_x = (grad_out * dx).sum(axis=1) * in_x
    grad_y = (grad_out * dy).sum(axis=1) * in_y
    return grad_value, grad_x, grad_y
