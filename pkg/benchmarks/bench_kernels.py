"""Time each hot kernel under the numpy and numba backends.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Both backends are
called directly from the kernel tables, so the ``NHCSR_DISABLE_NUMBA`` setting
of the current process does not matter here. The script also checks that the
two flavours agree on every input before timing them.
"""

import argparse
import timeit

import numpy as np

from nhcsr import _kernels as K


def _cases(rng):
    b, c, h = 8, 32, 34
    q = 8 * 256
    n_rows = b * 17 * 17
    idx = rng.integers(0, n_rows, size=(q, 4)).astype(np.int64)
    w = rng.uniform(size=(q, 4))
    n_el = 16 * 16
    nodes = rng.integers(0, 17 * 17, size=(n_el, 4)).astype(np.int64)
    return {
        "scatter_rows": (rng.normal(size=(q, c)), rng.integers(0, n_rows, size=q).astype(np.int64), n_rows),
        "bilinear_gather": (rng.normal(size=(n_rows, c)), idx, w),
        "bilinear_scatter": (rng.normal(size=(q, c)), idx, w, n_rows),
        "im2col3": (rng.normal(size=(b, c, h, h)),),
        "col2im3": (rng.normal(size=(b * h * h, c * 9)), b, c, h, h),
        "box_mean": (rng.uniform(size=(129, 129)), 8),
        "q1_coo": (rng.normal(size=(n_el, 4, 4)), nodes),
    }


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not K.NUMBA_KERNELS:
        print("numba is not installed; nothing to compare")
        return 1
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, inputs in cases.items():
        f_np, f_nb = K.NUMPY_KERNELS[name], K.NUMBA_KERNELS[name]
        if not _agree(f_np(*inputs), f_nb(*inputs)):  # also triggers compilation
            raise SystemExit(f"{name}: backends disagree")
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
