"""Thresholded heatmap masks and masked sinusoidal position codes."""
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor
from .heatmap import Heatmap


class MaskError(ValueError):
    pass


@dataclass
class MaskedPE:
    mask: np.ndarray
    encodings: np.ndarray
    tau: float
    dim: int


def _values(h):
    return h.values if isinstance(h, Heatmap) else np.asarray(h, dtype=np.float64)


def threshold_mask(h, tau):
    """1 where the heatmap strictly exceeds ``tau``, else 0.

    Raw (unnormalized) heatmaps are rejected: comparing an unscaled map with
    a threshold in [0, 1] usually yields an empty mask without any warning.
    """
    if not 0.0 <= tau <= 1.0:
        raise MaskError(f"tau must lie in [0, 1], got {tau}")
    if isinstance(h, Heatmap) and not h.normalized:
        raise MaskError("heatmap is not normalized")
    v = _values(h)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise MaskError(f"heatmap values outside [0, 1]: [{v.min()}, {v.max()}]")
    return (v > tau).astype(np.float64)


def pe_periods(dim):
    d = np.arange(dim)
    return 10000.0 ** (2.0 * d / dim)


def masked_pe(mask, dim):
    """mask(i, j) * (sin(i / t_d) + cos(j / t_d)) for d < dim; shape (..., H, W, dim)."""
    if dim < 2 or dim % 2:
        raise MaskError(f"dim must be an even integer >= 2, got {dim}")
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape[-2:]
    t = pe_periods(dim)
    rows = np.sin(np.arange(h)[:, None] / t)
    cols = np.cos(np.arange(w)[:, None] / t)
    pe = rows[:, None, :] + cols[None, :, :]
    # select rather than multiply: masked cells must be +0.0, never -0.0
    return np.where(mask[..., None] > 0, mask[..., None] * pe, 0.0)


def build_masked_pe(h, tau, dim):
    mask = threshold_mask(h, tau)
    return MaskedPE(mask=mask, encodings=masked_pe(mask, dim), tau=tau, dim=dim)


def apply_pe(tokens, pe, projection=None):
    """Add (optionally projected) encodings to (B, H*W, C) tokens.

    ``pe`` is (B, H, W, D) or (H, W, D). Without a projection D must equal C.
    """
    pe = np.asarray(pe.encodings if isinstance(pe, MaskedPE) else pe, dtype=np.float64)
    if pe.ndim == 3:
        pe = pe[None]
    b, hw, c = tokens.shape
    if pe.shape[1] * pe.shape[2] != hw or pe.shape[0] not in (1, b):
        raise ShapeError(f"apply_pe: encodings {pe.shape} do not match tokens {tokens.shape}")
    flat = Tensor(np.broadcast_to(pe.reshape(pe.shape[0], hw, -1), (b, hw, pe.shape[-1])).copy())
    if projection is not None:
        flat = projection(flat)
    elif flat.shape[-1] != c:
        raise ShapeError(f"apply_pe: encoding dim {flat.shape[-1]} != channels {c} and no projection")
    return tokens + flat
