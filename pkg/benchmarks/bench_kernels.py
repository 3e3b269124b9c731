"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends must produce identical arrays; the script checks that before
reporting timings.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dndm import kernels
from dndm.core import NoiseModel, cdf_from_probs
from dndm.schedule import beta_transition_distribution, build_linear


def _cases():
    sch = build_linear(50)
    noise_cdf = cdf_from_probs(NoiseModel.uniform(5).probs())
    x0 = np.array([0, 2, 4], dtype=np.int64)
    base = np.arange(20_000, dtype=np.uint64) << np.uint64(32)
    times = np.array([10, 25, 40])
    a = sch.alphas
    tau_cdf = cdf_from_probs(np.concatenate([a[:-1] - a[1:], [a[-1]]]))
    beta_cdf = beta_transition_distribution(3, 3, 1000).cdf_table()
    streams = np.arange(100_000, dtype=np.uint64) << np.uint64(32)
    row_cdfs = np.tile(tau_cdf, (100_000, 1))
    row_u = np.random.default_rng(7).random(100_000)
    return {
        "uniform_block(1e6)": lambda m: m.uniform_block(7, 3, 0, 1_000_000),
        "markov_forward(2e4 x 3, T=50)": lambda m: m.markov_forward_batch(
            x0, sch.betas, noise_cdf, 7, base, times),
        "nonmarkov_forward(2e4 x 3)": lambda m: m.nonmarkov_forward_batch(
            x0, tau_cdf, noise_cdf, 7, base, times),
        "transition_batch(1e5 x 25)": lambda m: m.transition_batch(beta_cdf, 7, streams, 25),
        "distinct_counts(1e5 x 25)": lambda m: m.distinct_counts(beta_cdf, 7, streams, 25),
        "rows_inverse_cdf(1e5 x 51)": lambda m: m.rows_inverse_cdf(row_cdfs, row_u),
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':34s}" + "".join(f"{name:>12s}" for name in backends) + "     speedup")
    for label, fn in _cases().items():
        outs, best = {}, {}
        for name, mod in backends.items():
            times = []
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                outs[name] = fn(mod)
                times.append(time.perf_counter() - t0)
            best[name] = min(times)
        if len(outs) == 2 and not _same(outs["python"], outs["compiled"]):
            raise SystemExit(f"backends disagree on {label}")
        row = f"{label:34s}" + "".join(f"{best[n] * 1e3:10.1f}ms" for n in backends)
        if "compiled" in best:
            row += f"  {best['python'] / best['compiled']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
