"""Blue-to-red heatmap overlays written as binary PPM (P6) files."""
import numpy as np

OUTLINE = np.array([255, 255, 255], dtype=np.int64)


class HeatbarWriteError(OSError):
    pass


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def colormap(values):
    """Linear blue (0) to red (1); returns int RGB with the trailing axis of 3."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    red = round_half_up(255.0 * v)
    blue = round_half_up(255.0 * (1.0 - v))
    return np.stack([red, np.zeros_like(red), blue], axis=-1)


def upsample(a, size):
    a = np.asarray(a)
    h, w = a.shape
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return a[rows][:, cols]


def mask_outline(mask):
    """Pixels inside the mask with a 4-neighbour outside it (image borders do not count)."""
    m = np.asarray(mask) > 0
    edge = np.zeros_like(m)
    edge[1:, :] |= m[1:, :] & ~m[:-1, :]
    edge[:-1, :] |= m[:-1, :] & ~m[1:, :]
    edge[:, 1:] |= m[:, 1:] & ~m[:, :-1]
    edge[:, :-1] |= m[:, :-1] & ~m[:, 1:]
    return edge


def heatbar_pixels(heat, mask=None, image=None, size=None, alpha=0.6):
    """(S, S, 3) uint8 overlay of ``heat`` on ``image`` (3, S, S, values in [0, 1])."""
    heat = np.asarray(heat, dtype=np.float64)
    if heat.min() < 0 or heat.max() > 1:
        raise ValueError("heatbar expects a normalized heatmap")
    size = size or (image.shape[-1] if image is not None else heat.shape[-1])
    color = colormap(upsample(heat, size)).astype(np.float64)
    if image is not None:
        base = np.clip(np.transpose(np.asarray(image, dtype=np.float64), (1, 2, 0)), 0, 1) * 255.0
        color = alpha * color + (1.0 - alpha) * base
    pix = np.clip(round_half_up(color), 0, 255)
    if mask is not None:
        pix[mask_outline(upsample(mask, size))] = OUTLINE
    return pix.astype(np.uint8)


def encode_p6(pixels):
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def decode_p6(data):
    """Parse a P6 file produced by :func:`encode_p6`; returns (S_h, S_w, 3) uint8."""
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = map(int, parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PPM is supported")
    body = parts[3]
    if len(body) != w * h * 3:
        raise ValueError(f"pixel data has {len(body)} bytes, expected {w * h * 3}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def render_heatbar(heat, mask, image, path, alpha=0.6):
    data = encode_p6(heatbar_pixels(heat, mask, image, alpha=alpha))
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise HeatbarWriteError(f"cannot write heatbar to {path}: {exc.strerror or exc}") from exc
    return path
