"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  Reports
the best-of-N wall time per kernel at a typical problem size and the
maximum absolute difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from lgmsep import _core_py

try:
    from lgmsep import _core
except ImportError:
    _core = None


def problem(F=129, N=200, I=2, J=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((F, N, I)) + 1j * rng.standard_normal((F, N, I))
    v = rng.uniform(0.1, 2.0, size=(J, F, N))
    B = rng.standard_normal((J, F, I, I)) + 1j * rng.standard_normal((J, F, I, I))
    R = B @ np.conj(np.swapaxes(B, -1, -2)) + 0.1 * np.eye(I)
    H = rng.standard_normal((F * N, 3, 3)) + 1j * rng.standard_normal((F * N, 3, 3))
    H = H + np.conj(np.swapaxes(H, -1, -2))
    return X, v, R, H


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    X, v, R, H = problem()
    cases = {
        "model_stats": lambda m: m.model_stats(X, v, R),
        "riccati_terms": lambda m: m.riccati_terms(X, v, R),
        "herm_eig_batch": lambda m: m.herm_eig_batch(H),
    }
    print(f"{'kernel':<16}{'python [ms]':>12}{'cython [ms]':>13}{'speedup':>9}{'max |diff|':>12}")
    for name, call in cases.items():
        tp, out_p = best_time(lambda: call(_core_py), args.repeat)
        if _core is None:
            print(f"{name:<16}{tp * 1e3:12.2f}{'n/a':>13}")
            continue
        tc, out_c = best_time(lambda: call(_core), args.repeat)
        if name == "herm_eig_batch":  # eigenvectors are defined up to phase
            diff = max_diff(out_p[0], out_c[0])
        else:
            diff = max_diff(out_p, out_c)
        print(f"{name:<16}{tp * 1e3:12.2f}{tc * 1e3:13.2f}{tp / tc:9.1f}{diff:12.2e}")


if __name__ == "__main__":
    main()
