"""Time the numba kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  The numba
functions are called once before timing so compilation is excluded.
"""
import argparse
import timeit

import numpy as np

from hedonic import _kernels


def cases(rng):
    U = rng.normal(0, 2, size=(2000, 8))
    draws = rng.gumbel(size=(5000, 9))
    shocks = rng.gumbel(size=(100_000, 4))
    systematic = np.array([0.0, 0.3, -0.2, 0.1])
    u = rng.uniform(size=(100_000, 4))
    return {
        "logit_rows (2000x8)": ("logit_rows", (U,)),
        "empirical_rows (5000 draws)": ("empirical_rows", (U[0], draws)),
        "choice_counts (1e5 agents)": ("choice_counts", (systematic, shocks)),
        "gumbel (4e5 uniforms)": ("gumbel", (u,)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not _kernels.NUMBA_KERNELS:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, (name, kargs) in cases(rng).items():
        fast = _kernels.NUMBA_KERNELS[name]
        slow = _kernels.NUMPY_KERNELS[name]
        fast(*kargs)
        t_np = min(timeit.repeat(lambda: slow(*kargs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fast(*kargs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<30}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
