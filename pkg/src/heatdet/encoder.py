"""Heatmap-conditioned token embeddings and the self-attention encoder over them."""
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat
from .autodiff.functional import softmax
from .autodiff.nn import FeedForward, LayerNorm, Linear, Module
from .heatmap import Heatmap
from .posmask import MaskedPE


class ConfigError(ValueError):
    pass


@dataclass
class FusedEmbedding:
    tokens: Tensor  # (B, H*W, 2C): class block then box block
    height: int
    width: int

    @property
    def spatial_index(self):
        n = self.height * self.width
        return np.stack(np.divmod(np.arange(n), self.width), axis=1)


@dataclass
class EncoderMemory:
    keys: Tensor
    values: Tensor
    height: int
    width: int
    attention: list = None

    @property
    def spatial_index(self):
        n = self.height * self.width
        return np.stack(np.divmod(np.arange(n), self.width), axis=1)


def _map(h):
    v = h.values if isinstance(h, Heatmap) else np.asarray(h, dtype=np.float64)
    return v[None] if v.ndim == 2 else v


def flatten_tokens(features):
    """(B, C, H, W) -> (B, H*W, C), row-major over locations."""
    b, c, h, w = features.shape
    return features.reshape(b, c, h * w).transpose(0, 2, 1)


def build_embeddings(features, h_class, h_bbox, pe, projection=None):
    """Concatenate class- and box-conditioned tokens.

    Each block is the feature map scaled per location by its heatmap plus
    the (projected) masked position code. ``pe`` may be None for a PE-free
    embedding.
    """
    b, c, h, w = features.shape
    hc, hb = _map(h_class), _map(h_bbox)
    for m in (hc, hb):
        if m.shape[-2:] != (h, w) or m.shape[0] not in (1, b):
            raise ShapeError(f"heatmap {m.shape} does not match features {features.shape}")
    hc = np.broadcast_to(hc, (b, h, w))
    hb = np.broadcast_to(hb, (b, h, w))
    blocks = []
    for hm in (hc, hb):
        scale = Tensor(np.broadcast_to(hm[:, None], (b, c, h, w)).copy())
        blocks.append(flatten_tokens(features * scale))
    if pe is not None:
        enc = pe.encodings if isinstance(pe, MaskedPE) else np.asarray(pe, dtype=np.float64)
        enc = np.broadcast_to(enc if enc.ndim == 4 else enc[None], (b, h, w, enc.shape[-1]))
        code = Tensor(enc.reshape(b, h * w, -1).copy())
        if projection is not None:
            code = projection(code)
        if code.shape[-1] != c:
            raise ShapeError(f"position code width {code.shape[-1]} != feature channels {c}")
        blocks = [blk + code for blk in blocks]
    return FusedEmbedding(concat(blocks, axis=-1), h, w)


class MultiHeadAttention(Module):
    def __init__(self, rng, dim, heads):
        if dim % heads:
            raise ConfigError(f"model dimension {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.o = Linear(rng, dim, dim)

    def _split(self, x):
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x, key_mask=None):
        """Returns (output, weights); ``key_mask`` (B, N) marks keys that may be attended."""
        b, n, d = x.shape
        dh = d // self.heads
        q = self._split(self.q(x)) * (1.0 / np.sqrt(dh))
        k, v = self._split(self.k(x)), self._split(self.v(x))
        scores = q @ k.transpose(0, 1, 3, 2)
        if key_mask is not None:
            bias = np.where(np.asarray(key_mask, bool), 0.0, -1e9)[:, None, None, :]
            scores = scores + Tensor(np.broadcast_to(bias, scores.shape).copy())
        weights = softmax(scores, axis=-1)
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.o(out), weights


class EncoderLayer(Module):
    """Post-norm block: attention, add, norm, feed-forward, add, norm."""

    def __init__(self, rng, dim, heads, hidden=None):
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm1 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, hidden or 2 * dim)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x):
        a, weights = self.attn(x)
        x = self.norm1(x + a)
        return self.norm2(x + self.ffn(x)), weights


def mohfe_attention(layer, fused):
    tokens = fused.tokens if isinstance(fused, FusedEmbedding) else fused
    out, weights = layer(tokens)
    return out, weights


class Encoder(Module):
    def __init__(self, rng, dim, heads=4, depth=1, hidden=None):
        if depth < 1:
            raise ConfigError(f"encoder depth must be >= 1, got {depth}")
        self.layers = [EncoderLayer(rng, dim, heads, hidden) for _ in range(depth)]

    def __call__(self, fused):
        x, maps = fused.tokens, []
        for layer in self.layers:
            x, w = layer(x)
            maps.append(w)
        return EncoderMemory(keys=x, values=x, height=fused.height, width=fused.width, attention=maps)


def encoder_forward(encoder, features, h_class, h_bbox, pe, projection=None):
    return encoder(build_embeddings(features, h_class, h_bbox, pe, projection))


def layer_parameter_count(dim, hidden=None):
    hidden = hidden or 2 * dim
    attn = 4 * (dim * dim + dim)
    ffn = dim * hidden + hidden + hidden * dim + dim
    return attn + ffn + 4 * dim
