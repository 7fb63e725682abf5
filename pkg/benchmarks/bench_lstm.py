"""Time the compiled LSTM kernels against the numpy fallback.

    python3 benchmarks/bench_lstm.py [--repeat 20]

Prints forward and forward+backward times per shape and the speedup, and
checks that both backends agree to 1e-10.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from vaelm.core import _lstm_py

try:
    from vaelm.core import _lstm_ext
except ImportError:  # extension not built
    _lstm_ext = None

SHAPES = [  # (T, B, H)
    (12, 32, 64),
    (12, 32, 128),
    (24, 32, 256),
    (6, 1024, 16),
]


def inputs(T, B, H, seed=0):
    rng = np.random.default_rng(seed)
    xw = rng.normal(0, 0.5, (T, B, 4 * H))
    wh = rng.uniform(-0.1, 0.1, (H, 4 * H))
    h0 = rng.normal(0, 0.1, (B, H))
    c0 = rng.normal(0, 0.1, (B, H))
    lens = rng.integers(1, T + 1, size=B)
    mask = (np.arange(T)[:, None] < lens[None, :]).astype(np.float64)
    dhs = rng.normal(size=(T, B, H))
    return xw, wh, h0, c0, mask, dhs


def run(mod, args):
    xw, wh, h0, c0, mask, dhs = args
    hs, cs, gates, tcs = mod.lstm_forward(xw, wh, h0, c0, mask)
    return hs, mod.lstm_backward(dhs, wh, cs, gates, tcs, mask)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    opts = ap.parse_args()
    if _lstm_ext is None:
        print("compiled extension not available; only the fallback can run")
    print(f"{'T':>3} {'B':>5} {'H':>4}  {'python fwd':>11} {'cython fwd':>11} "
          f"{'python f+b':>11} {'cython f+b':>11} {'speedup':>8}")
    for T, B, H in SHAPES:
        args = inputs(T, B, H)
        row = {}
        for name, mod in (("python", _lstm_py), ("cython", _lstm_ext)):
            if mod is None:
                continue
            fwd = min(timeit.repeat(lambda: mod.lstm_forward(*args[:5]), number=1,
                                    repeat=opts.repeat))
            both = min(timeit.repeat(lambda: run(mod, args), number=1, repeat=opts.repeat))
            row[name] = (fwd, both)
        if _lstm_ext is not None:
            a, b = run(_lstm_py, args), run(_lstm_ext, args)
            diff = max(np.abs(a[0] - b[0]).max(),
                       *(np.abs(x - y).max() for x, y in zip(a[1], b[1])))
            assert diff < 1e-10, f"backends disagree by {diff}"
            speed = row["python"][1] / row["cython"][1]
            print(f"{T:>3} {B:>5} {H:>4}  {row['python'][0] * 1e3:>9.2f}ms "
                  f"{row['cython'][0] * 1e3:>9.2f}ms {row['python'][1] * 1e3:>9.2f}ms "
                  f"{row['cython'][1] * 1e3:>9.2f}ms {speed:>7.2f}x")
        else:
            print(f"{T:>3} {B:>5} {H:>4}  {row['python'][0] * 1e3:>9.2f}ms")


if __name__ == "__main__":
    main()
