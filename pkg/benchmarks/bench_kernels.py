"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times masked row sparsemax and the GRU recurrence (forward + backward) at
shapes typical of a training batch, and checks both backends agree.
"""

import argparse
import timeit

import numpy as np

from eduattn.kernels import _pykernels as py

try:
    from eduattn.kernels import _ckernels as cy
except ImportError:
    cy = None


def cases(rng):
    z = rng.normal(size=(4096, 24))
    mask = rng.random(z.shape) > 0.2
    mask[:, 0] = True
    g = rng.normal(size=z.shape)
    zs, ms, gs = z[:64, :4], mask[:64, :4], g[:64, :4]

    def sm(z, mask, g):
        def run(k):
            p = k.sparsemax_rows(z, mask)
            return p, k.sparsemax_rows_backward(p, g)
        return run

    def gru(T, B, H):
        xw = rng.normal(scale=0.3, size=(T, B, 3 * H))
        u = rng.uniform(-0.1, 0.1, size=(H, 3 * H))
        gmask = np.ones((T, B), dtype=bool)
        gmask[T // 2:, ::3] = False
        dh = rng.normal(size=(T, B, H))

        def run(k):
            hs, cache = k.gru_forward(xw, u, gmask)
            return (hs,) + tuple(k.gru_backward(dh, u, gmask, cache))
        return run

    return {"sparsemax 4096x24 fwd+bwd": sm(z, mask, g),
            "sparsemax 64x4 fwd+bwd": sm(zs, ms, gs),
            "gru T=24 B=160 H=150 fwd+bwd": gru(24, 160, 150),
            "gru T=12 B=16 H=16 fwd+bwd": gru(12, 16, 16)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if cy is None:
        print("compiled backend not built; only the Python timings are shown")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng).items():
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:32s} {tp:10.2f}")
            continue
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(fn(py), fn(cy)))
        print(f"{name:32s} {tp:10.2f} {tc:10.2f} {tp / tc:7.1f}x {diff:10.1e}")


if __name__ == "__main__":
    main()
