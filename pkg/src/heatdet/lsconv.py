"""Axis-wise strip convolution with a straight and a drifting (snake) sampling path.

Each location gathers nine taps along a row and nine along a column. The
straight path reads the taps at unit spacing; the snake path lets the
off-axis coordinate drift by the running sum of learned per-step offsets,
sampled with bilinear interpolation. The four path responses are
concatenated and mixed by a 1x1 convolution.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .autodiff import ShapeError, Tensor, bilinear_sample, concat, stack
from .autodiff.nn import Conv2d, Module, Parameter, xavier

TAPS = np.arange(-4, 5)
STEPS = 4
HORIZONTAL, VERTICAL = "horizontal", "vertical"
LINEAR, SNAKE = "linear", "snake"


@dataclass
class OffsetField:
    """Per-step offsets, each (B, 2, 4, H, W): side (negative, positive) x step.

    ``delta_y`` bends the horizontal paths, ``delta_x`` the vertical ones.
    """
    delta_y: object
    delta_x: object
    clamp: float = 1.0

    @classmethod
    def zeros(cls, batch, height, width, clamp=1.0):
        z = np.zeros((batch, 2, STEPS, height, width))
        return cls(Tensor(z), Tensor(z.copy()), clamp)


@dataclass
class SamplingPath:
    center: tuple
    coordinates: np.ndarray  # (9, 2) of (x, y), taps ordered -4..4
    axis: str
    kind: str


def accumulate_path(center, step_offsets, axis=HORIZONTAL, kind=SNAKE):
    """Nine tap positions around ``center`` = (x, y).

    ``step_offsets`` is (2, 4): per-step off-axis offsets on the negative and
    positive side, nearest step first. Linear paths ignore them.
    """
    cx, cy = center
    steps = np.zeros((2, STEPS)) if kind == LINEAR else np.asarray(step_offsets, dtype=np.float64)
    cum = np.cumsum(steps, axis=1)
    drift = np.concatenate([cum[0, ::-1], [0.0], cum[1]])
    if axis == HORIZONTAL:
        coords = np.stack([cx + TAPS, cy + drift], axis=1)
    else:
        coords = np.stack([cx + drift, cy + TAPS], axis=1)
    return SamplingPath(center=(cx, cy), coordinates=coords.astype(np.float64), axis=axis, kind=kind)


def sample_bilinear(feature_map, position):
    """Bilinear read of a (C, H, W) map at fractional (x, y); coordinates clamp to the border."""
    fm = np.asarray(feature_map, dtype=np.float64)
    x, y = position
    out = _kernels.bilinear_forward(fm[None], np.array([[x]], dtype=np.float64), np.array([[y]], dtype=np.float64))
    return out[0, :, 0]


def _drift(delta):
    """(B, 2, 4, H, W) step offsets -> (B, 9, H, W) off-axis drift per tap."""
    neg = [delta[:, 0, 0]]
    pos = [delta[:, 1, 0]]
    for s in range(1, STEPS):
        neg.append(neg[-1] + delta[:, 0, s])
        pos.append(pos[-1] + delta[:, 1, s])
    zero = Tensor(np.zeros(neg[0].shape))
    return stack(neg[::-1] + [zero] + pos, axis=1)


def path_coordinates(offsets, height, width):
    """(x, y) tensors of shape (B, 9, H, W) for the four paths, keyed (axis, kind)."""
    b = offsets.delta_y.shape[0]
    rows = np.broadcast_to(np.arange(height)[None, None, :, None], (b, 9, height, width))
    cols = np.broadcast_to(np.arange(width)[None, None, None, :], (b, 9, height, width))
    taps = TAPS[None, :, None, None]
    along_x = Tensor(cols + taps)
    along_y = Tensor(rows + taps)
    r, c = Tensor(rows.astype(np.float64)), Tensor(cols.astype(np.float64))
    return {
        (HORIZONTAL, LINEAR): (along_x, r),
        (HORIZONTAL, SNAKE): (along_x, r + _drift(offsets.delta_y)),
        (VERTICAL, LINEAR): (c, along_y),
        (VERTICAL, SNAKE): (c + _drift(offsets.delta_x), along_y),
    }


PATH_ORDER = ((HORIZONTAL, LINEAR), (HORIZONTAL, SNAKE), (VERTICAL, LINEAR), (VERTICAL, SNAKE))


def strip_response(x, px, py, weight):
    """Sample ``x`` (B, C, H, W) at the 9 taps per location and apply a (Cp, C, 9) kernel."""
    b, c, h, w = x.shape
    cp = weight.shape[0]
    if weight.shape != (cp, c, 9):
        raise ShapeError(f"strip weight {weight.shape} does not match {c} input channels")
    taps = bilinear_sample(x, px.reshape(b, 9 * h * w), py.reshape(b, 9 * h * w))
    taps = taps.reshape(b, c, 9, h, w).transpose(0, 3, 4, 1, 2).reshape(b * h * w, c * 9)
    out = taps @ weight.reshape(cp, c * 9).transpose(1, 0)
    return out.reshape(b, h, w, cp).transpose(0, 3, 1, 2)


def continuity_penalty(offsets):
    """Mean squared difference of consecutive steps, summed over the two axes."""
    total = 0.0
    for delta in (offsets.delta_y, offsets.delta_x):
        d = delta if isinstance(delta, Tensor) else Tensor(delta)
        diff = d[:, :, 1:] - d[:, :, :-1]
        total = (diff * diff).mean() + total
    return total


class LSConv(Module):
    def __init__(self, rng, c_in, c_out, path_channels=None, clamp=1.0):
        cp = path_channels or c_out
        self.clamp = clamp
        # zero-initialised so training starts from straight strips
        self.offset_head = Conv2d(rng, c_in, 4 * STEPS, 3)
        self.offset_head.weight.data[:] = 0.0
        self.path_weights = [
            Parameter(xavier(rng, c_in * 9, cp * 9, (cp, c_in, 9))) for _ in PATH_ORDER
        ]
        self.fuse = Conv2d(rng, 4 * cp, c_out, 1)

    def offsets(self, x):
        b, _, h, w = x.shape
        raw = self.offset_head(x).tanh() * self.clamp
        raw = raw.reshape(b, 2, 2, STEPS, h, w)
        return OffsetField(delta_y=raw[:, 0], delta_x=raw[:, 1], clamp=self.clamp)

    def path_outputs(self, x, offsets):
        b, _, h, w = x.shape
        if offsets.delta_y.shape != (b, 2, STEPS, h, w) or offsets.delta_x.shape != (b, 2, STEPS, h, w):
            raise ShapeError(f"offset field {offsets.delta_y.shape} does not match input {x.shape}")
        coords = path_coordinates(offsets, h, w)
        return [strip_response(x, *coords[key], wt) for key, wt in zip(PATH_ORDER, self.path_weights)]

    def __call__(self, x, offsets=None):
        if x.ndim != 4:
            raise ShapeError(f"LSConv expects (B, C, H, W), got {x.shape}")
        offsets = self.offsets(x) if offsets is None else offsets
        return self.fuse(concat(self.path_outputs(x, offsets), axis=1)), offsets
