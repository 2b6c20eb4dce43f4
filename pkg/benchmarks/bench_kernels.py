"""Compare the compiled and numpy GRU recurrence kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Prints forward/backward milliseconds per call for each backend, the speedup,
and the largest absolute disagreement between the two.
"""

import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from dasel.nn import kernels

SHAPES = [  # (T, B, H)
    (50, 32, 128),  # training batch, first layer
    (50, 32, 64),  # training batch, second layer
    (15, 1024, 128),  # inference batch
]


def _time(fn, repeat):
    fn()
    t = time.perf_counter()
    for _ in range(repeat):
        out = fn()
    return (time.perf_counter() - t) / repeat * 1e3, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the numpy kernels can run")
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    rng = np.random.default_rng(0)
    print(f"{'T':>4} {'B':>5} {'H':>4}  {'backend':8} {'fwd ms':>8} {'bwd ms':>8}")
    with threadpool_limits(limits=1):
        for T, B, H in SHAPES:
            gx = rng.normal(size=(T, B, 3 * H))
            U = rng.normal(size=(H, 3 * H)) * 0.1
            bh = rng.normal(size=3 * H)
            mask = (rng.random((T, B)) < 0.9).astype(np.uint8)
            dout = rng.normal(size=(T, B, H)) * mask[..., None]
            res, times = {}, {}
            for be in backends:
                tf, fwd = _time(lambda: kernels.forward(gx, U, bh, mask, backend=be), args.repeat)
                tb, bwd = _time(lambda: kernels.backward(dout, *fwd, U, mask, backend=be), args.repeat)
                res[be], times[be] = (fwd, bwd), (tf, tb)
                print(f"{T:4d} {B:5d} {H:4d}  {be:8} {tf:8.2f} {tb:8.2f}")
            if len(backends) == 2:
                py, cy = times["python"], times["cython"]
                diff = max(float(np.max(np.abs(a - b)))
                           for part in (0, 1)
                           for a, b in zip(res["python"][part], res["cython"][part]))
                print(f"{'':16}speedup fwd {py[0] / cy[0]:.2f}x  bwd {py[1] / cy[1]:.2f}x  "
                      f"max |diff| {diff:.2e}")


if __name__ == "__main__":
    main()
