"""Procedural scenes of small shapes on cluttered backgrounds."""
from dataclasses import dataclass

import numpy as np

SHAPES = ("square", "disk", "triangle", "cross", "ring")
MAX_OBJECT_FRACTION = 0.12


@dataclass
class SceneSample:
    image: np.ndarray   # (3, S, S) in [0, 1]
    boxes: np.ndarray   # (n, 4) normalized (cx, cy, w, h)
    labels: np.ndarray  # (n,)
    seed: int
    object_pixels: int = 0


def _shape_mask(kind, size):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2.0
    if kind == "square":
        m = np.ones((size, size), bool)
    elif kind == "disk":
        m = (xx - c) ** 2 + (yy - c) ** 2 <= c * c
    elif kind == "triangle":
        m = np.abs(xx - c) <= yy / 2.0
    elif kind == "cross":
        t = max(size / 6.0, 1.0)
        m = (np.abs(xx - c) <= t) | (np.abs(yy - c) <= t)
    elif kind == "ring":
        r2 = (xx - c) ** 2 + (yy - c) ** 2
        m = (r2 <= c * c) & (r2 >= (0.5 * c) ** 2)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return m


def _background(rng, s):
    coarse = rng.uniform(0.15, 0.45, size=(3, 5, 5))
    idx = np.linspace(0, 4, s)
    i0 = np.minimum(idx.astype(int), 3)
    f = idx - i0
    rows = coarse[:, i0] * (1 - f)[None, :, None] + coarse[:, i0 + 1] * f[None, :, None]
    smooth = rows[:, :, i0] * (1 - f)[None, None, :] + rows[:, :, i0 + 1] * f[None, None, :]
    return smooth + rng.normal(0, 0.03, size=(3, s, s))


def _distractors(rng, img):
    s = img.shape[-1]
    for _ in range(rng.integers(2, 6)):
        color = rng.uniform(0.2, 0.8, size=3)
        if rng.uniform() < 0.5:
            # thin line
            r0, c0 = rng.integers(0, s, size=2)
            ang = rng.uniform(0, np.pi)
            length = rng.integers(s // 4, s // 2)
            t = np.arange(length)
            rr = np.clip((r0 + t * np.sin(ang)).astype(int), 0, s - 1)
            cc = np.clip((c0 + t * np.cos(ang)).astype(int), 0, s - 1)
            img[:, rr, cc] = 0.5 * img[:, rr, cc] + 0.5 * color[:, None]
        else:
            # striped patch
            h, w = rng.integers(6, 16, size=2)
            r0, c0 = rng.integers(0, s - h), rng.integers(0, s - w)
            stripes = (np.arange(w) // 2) % 2 == 0
            patch = img[:, r0:r0 + h, c0:c0 + w]
            patch[:, :, stripes] = 0.6 * patch[:, :, stripes] + 0.4 * color[:, None, None]


def generate_scene(seed, difficulty="normal", size=64, classes=3, min_objects=2, max_objects=8):
    """One deterministic scene; ``difficulty='clean'`` skips distractor textures."""
    if classes > len(SHAPES):
        raise ValueError(f"at most {len(SHAPES)} classes are supported")
    rng = np.random.default_rng(seed)
    img = _background(rng, size)
    if difficulty != "clean":
        _distractors(rng, img)
    n = int(rng.integers(min_objects, max_objects + 1))
    occupied = np.zeros((size, size), bool)
    budget = MAX_OBJECT_FRACTION * size * size
    lo, hi = max(size // 10, 4), max(size // 6, 6)
    boxes, labels, area = [], [], 0
    for _ in range(n):
        for _attempt in range(30):
            obj = int(rng.integers(lo, hi + 1))
            r, c = rng.integers(1, size - obj - 1, size=2)
            if occupied[max(r - 1, 0):r + obj + 1, max(c - 1, 0):c + obj + 1].any():
                continue
            k = int(rng.integers(classes))
            m = _shape_mask(SHAPES[k], obj)
            if area + m.sum() > budget:
                continue
            color = rng.uniform(0.65, 1.0, size=3) * (rng.uniform(size=3) > 0.3)
            color[rng.integers(3)] = rng.uniform(0.8, 1.0)
            region = img[:, r:r + obj, c:c + obj]
            region[:, m] = color[:, None] + rng.normal(0, 0.02, size=(3, m.sum()))
            occupied[r:r + obj, c:c + obj] = True
            area += m.sum()
            ys, xs = np.nonzero(m)
            x0, x1, y0, y1 = c + xs.min(), c + xs.max() + 1, r + ys.min(), r + ys.max() + 1
            boxes.append([(x0 + x1) / 2 / size, (y0 + y1) / 2 / size, (x1 - x0) / size, (y1 - y0) / size])
            labels.append(k)
            break
    return SceneSample(
        image=np.clip(img, 0.0, 1.0),
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        labels=np.array(labels, dtype=np.int64),
        seed=seed,
        object_pixels=int(area),
    )


def object_pixel_fraction(scene):
    s = scene.image.shape[-1]
    return scene.object_pixels / float(s * s)


TRAIN_BASE, TEST_BASE = 0, 1_000_000


def make_split(split, count, difficulty="normal", size=64, classes=3):
    """The benchmark splits use fixed scene seeds so every run sees the same data."""
    base = TRAIN_BASE if split == "train" else TEST_BASE
    return [generate_scene(base + i, difficulty, size, classes) for i in range(count)]


def batch_arrays(scenes):
    images = np.stack([s.image for s in scenes]) - 0.5
    return images, [s.boxes for s in scenes], [s.labels for s in scenes]
