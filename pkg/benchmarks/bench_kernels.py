"""Compare the compiled kernel backend against the pure-numpy fallback.

Times conv2d forward/backward and 2x2 maxpool forward/backward on a few
batch sizes and prints per-call medians plus the speedup ratio.  Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mixdistill.kernels import python_backend

try:
    from mixdistill.kernels import _fast
except ImportError:
    _fast = None


def median_time(fn, repeats=7):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return sorted(times)[len(times) // 2]


def bench_case(batch, side, cin, cout):
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(size=(batch, side, side, cin)))
    w = np.ascontiguousarray(rng.normal(size=(5, 5, cin, cout)))
    b = rng.normal(size=cout)
    y = python_backend.conv2d_forward(x, w, b)
    dy = np.ascontiguousarray(rng.normal(size=y.shape))
    xp = np.ascontiguousarray(rng.normal(size=(batch, (side // 2) * 2, (side // 2) * 2, cin)))
    _, arg = python_backend.maxpool2_forward(xp)
    dyp = np.ascontiguousarray(rng.normal(size=(batch, xp.shape[1] // 2, xp.shape[2] // 2, cin)))

    ops = {
        "conv_forward": lambda be: be.conv2d_forward(x, w, b),
        "conv_backward": lambda be: be.conv2d_backward(x, w, dy),
        "pool_forward": lambda be: be.maxpool2_forward(xp),
        "pool_backward": lambda be: be.maxpool2_backward(arg, dyp, xp.shape),
    }
    print(f"\nbatch={batch} side={side} cin={cin} cout={cout}")
    print(f"  {'op':<14} {'numpy (ms)':>11} {'cython (ms)':>12} {'ratio':>7}")
    for name, op in ops.items():
        t_py = median_time(lambda: op(python_backend))
        if _fast is None:
            print(f"  {name:<14} {1000 * t_py:>11.2f} {'n/a':>12} {'n/a':>7}")
            continue
        t_cy = median_time(lambda: op(_fast))
        ratio = t_py / t_cy
        print(f"  {name:<14} {1000 * t_py:>11.2f} {1000 * t_cy:>12.2f} {ratio:>6.2f}x")


def main():
    if _fast is None:
        print("compiled backend not built; showing numpy-only timings")
    for case in ((16, 12, 1, 8), (64, 28, 1, 8), (32, 28, 8, 16)):
        bench_case(*case)
    if _fast is not None:
        print("\nratio > 1 means the compiled backend is faster; results depend "
              "on BLAS threading and image size.")


if __name__ == "__main__":
    main()
