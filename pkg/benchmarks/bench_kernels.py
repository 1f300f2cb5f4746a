"""Time the numba kernels against their numpy fallbacks on representative shapes.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs once on both backends before timing (numba compiles or loads its
cache on first call), the two outputs are checked for agreement, then the best of
``--repeat`` runs is reported.
"""
import argparse
import json
import time

import numpy as np

from spdescore import kernels


def cases(rng):
    B, M, N = 4096, 512, 4
    dW = np.sqrt(1.0 / M) * rng.standard_normal((B, M, N))
    sqrt_q = np.tril(rng.standard_normal((N, N)))
    lam = -0.1 * np.arange(1, N + 1) ** 2
    yield "em_terminal", (rng.standard_normal(N), 1 + lam / M, sqrt_q, dW)
    yield "ito_sum", (rng.standard_normal((M, N)), dW)
    yield "conv_sum", (np.exp(np.outer(np.linspace(1, 0, M), lam)), sqrt_q, dW)

    B, K, N = 4096, 512, 8
    lam = -0.5 * np.arange(1, N + 1) ** 2
    yield "reverse_integrate", (
        rng.standard_normal((B, N)), lam, 0.1 * rng.standard_normal((K, N, N)),
        rng.standard_normal((K, N)), np.full(K, 1.0 / K), np.diag(1.0 / np.arange(1, N + 1)),
        rng.standard_normal((B, K, N)),
    )


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare against")

    rows = []
    print(f"{'kernel':20s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
    for name, a in cases(np.random.default_rng(args.seed)):
        f_np = getattr(kernels.numpy_kernels, name)
        f_nb = getattr(kernels.numba_kernels, name)
        np.testing.assert_allclose(f_nb(*a), f_np(*a), rtol=1e-10, atol=1e-12)  # warm-up and parity
        t_np = best_of(f_np, a, args.repeat)
        t_nb = best_of(f_nb, a, args.repeat)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb})
        print(f"{name:20s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
