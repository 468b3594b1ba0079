"""Compare the compiled shrinkage kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from lassolab import _kernels_py
from lassolab.kernels import BACKEND

try:
    from lassolab import _kernels as _compiled
except ImportError:
    _compiled = None


def _time(fn, *args, repeat=7, inner=20):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    if _compiled is None:
        print("compiled extension not importable; timing fallback only")
    cases = [
        ("1d m=32", rng.normal(size=32), np.array([0.3])),
        ("1d m=4096", rng.normal(size=4096), np.array([0.3])),
        ("2d 32x500", rng.normal(size=(32, 500)), rng.uniform(0.1, 0.5, 32)),
        ("2d 100x1000", rng.normal(size=(100, 1000)),
         rng.uniform(0.1, 0.5, 100)),
    ]
    header = f"{'case':<14}{'numpy (us)':>12}"
    if _compiled is not None:
        header += f"{'compiled (us)':>15}{'speedup':>9}"
    print(header)
    for name, u, theta in cases:
        if u.ndim == 1:
            py = _time(_kernels_py.soft_threshold_1d, u, float(theta[0]))
            row = f"{name:<14}{py * 1e6:>12.2f}"
            if _compiled is not None:
                cy = _time(_compiled.soft_threshold_1d, u, theta)
                row += f"{cy * 1e6:>15.2f}{py / cy:>9.2f}"
        else:
            py = _time(_kernels_py.shrink_mask_2d, u, theta)
            row = f"{name:<14}{py * 1e6:>12.2f}"
            if _compiled is not None:
                cy = _time(_compiled.shrink_mask_2d, u, theta)
                row += f"{cy * 1e6:>15.2f}{py / cy:>9.2f}"
        print(row)


if __name__ == "__main__":
    main()
