"""Compare the compiled and pure-numpy bilinear sampling kernels.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from heatdet import _kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    # shapes of the detector's hot path: LSConv taps and deformable-attention samples
    cases = {
        "lsconv": (8, 32, 16, 16, 9 * 256),
        "deform": (32, 16, 16, 16, 80),
        "large": (4, 64, 64, 64, 9 * 4096),
    }
    print(f"backends available: {', '.join(_kernels.available_backends())}")
    print(f"{'case':8s} {'backend':9s} {'forward ms':>11s} {'backward ms':>12s}")
    results = {}
    for name, (n, c, h, w, p) in cases.items():
        value = rng.normal(size=(n, c, h, w))
        x = rng.uniform(-1, w, size=(n, p))
        y = rng.uniform(-1, h, size=(n, p))
        g = rng.normal(size=(n, c, p))
        for backend in _kernels.available_backends():
            prev = _kernels.use_backend(backend)
            try:
                fwd = _time(lambda: _kernels.bilinear_forward(value, x, y), args.repeat)
                bwd = _time(lambda: _kernels.bilinear_backward(g, value, x, y), args.repeat)
                results[(name, backend)] = (_kernels.bilinear_forward(value, x, y),
                                            _kernels.bilinear_backward(g, value, x, y))
            finally:
                _kernels.use_backend(prev)
            print(f"{name:8s} {backend:9s} {fwd * 1e3:11.2f} {bwd * 1e3:12.2f}")
        outs = [results[(name, b)] for b in _kernels.available_backends()]
        if len(outs) == 2:
            diff = max(np.abs(outs[0][0] - outs[1][0]).max(),
                       *(np.abs(a - b).max() for a, b in zip(outs[0][1], outs[1][1])))
            print(f"{name:8s} max |compiled - python| = {diff:.2e}")


if __name__ == "__main__":
    main()
