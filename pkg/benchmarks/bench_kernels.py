"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from ldsgd import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for T in (1_000, 10_000, 100_000):
        r = np.where(rng.uniform(size=T) < 0.3, 0.8, 1.0)
        yield f"window_sums T={T}", (lambda f, r=r: f(r, False)), K.window_sums_numpy, K.window_sums_numba
    for T in (1_000, 5_000):
        r = np.where(rng.uniform(size=T) < 0.3, 0.8, 1.0)
        s = K.window_sums_numpy(r, False)
        yield f"c_stat T={T}", (lambda f, r=r, s=s: f(r, s, False)), K.c_stat_numpy, K.c_stat_numba
    key = np.array([1, 2], dtype=np.uint64)
    for N in (10_000, 1_000_000):
        ctr = rng.integers(0, 2**32, size=(N, 4), dtype=np.uint64).astype(np.uint32)
        yield f"philox N={N}", (lambda f, c=ctr: f(c, key)), K.philox4x32_numpy, K.philox4x32_numba


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, call, np_fn, nb_fn in cases(rng):
        a = best_of(lambda: call(np_fn), args.repeat)
        b = best_of(lambda: call(nb_fn), args.repeat)
        print(f"{name:<24}{a:>12.4g}{b:>12.4g}{a / b:>9.1f}x")


if __name__ == "__main__":
    main()
