"""Timing comparison of the numba and numpy kernel twins.

Each kernel is timed on training-shaped inputs (a 256-row batch expanded by
100 tau draws gives 25,600 elements; the row-wise logsumexp sees the same
data as a [256, 100] matrix).  Run from the repository root:

    python3 benchmarks/bench_kernels.py [--runs 200] [--size 25600]
"""

import argparse
import time

import numpy as np

from umal import kernels


def make_inputs(size, rng):
    y = rng.normal(0.0, 2.0, size)
    mu = rng.normal(0.0, 2.0, size)
    b = rng.uniform(0.1, 3.0, size)
    sigma = rng.uniform(0.1, 3.0, size)
    tau = rng.uniform(0.01, 0.99, size)
    g = rng.normal(0.0, 1.0, size)
    x = rng.normal(0.0, 4.0, size)
    rows = size // 100
    a = rng.normal(0.0, 3.0, (rows, 100))
    out = kernels.logsumexp_rows_fwd(np.ascontiguousarray(a))
    return {
        "softplus_fwd": (x,),
        "softplus_bwd": (x, g),
        "ald_logpdf_fwd": (y, mu, b, tau),
        "ald_logpdf_bwd": (y, mu, b, tau, g),
        "pinball_fwd": (y, mu, tau),
        "pinball_bwd": (y, mu, tau, g),
        "normal_logpdf_fwd": (y, mu, sigma),
        "normal_logpdf_bwd": (y, mu, sigma, g),
        "laplace_logpdf_fwd": (y, mu, b),
        "laplace_logpdf_bwd": (y, mu, b, g),
        "logsumexp_rows_fwd": (a,),
        "logsumexp_rows_bwd": (a, out, out.copy()),
    }


def time_kernel(fn, args, n_runs):
    fn(*args)  # warmup (and JIT compile on the numba path)
    times = []
    for _ in range(n_runs):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return np.array(times) * 1e3


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=200)
    parser.add_argument("--size", type=int, default=25600)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    inputs = make_inputs(args.size, rng)
    original = kernels.active_backend()

    results = {}
    for backend in ("numpy", "numba"):
        try:
            kernels.set_backend(backend)
        except ImportError:
            print(f"backend {backend} unavailable, skipping")
            continue
        for name, call_args in inputs.items():
            fn = getattr(kernels, name)
            results.setdefault(name, {})[backend] = time_kernel(
                fn, call_args, args.runs
            )
    kernels.set_backend(original)

    print(f"\n{args.size} elements, {args.runs} runs, times in ms")
    header = f"{'kernel':<20} {'numpy':>16} {'numba':>16} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, timings in results.items():
        np_t = timings.get("numpy")
        nb_t = timings.get("numba")
        np_txt = f"{np_t.mean():7.3f} ±{np_t.std():6.3f}" if np_t is not None else "-"
        nb_txt = f"{nb_t.mean():7.3f} ±{nb_t.std():6.3f}" if nb_t is not None else "-"
        ratio = f"{np_t.mean() / nb_t.mean():7.2f}x" if np_t is not None and nb_t is not None else "-"
        print(f"{name:<20} {np_txt:>16} {nb_txt:>16} {ratio:>8}")


if __name__ == "__main__":
    main()
