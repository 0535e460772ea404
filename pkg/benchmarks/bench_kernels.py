"""Time the numba kernels against the pure-numpy fallback.

Runs both implementations in-process (independent of RISCADE_BACKEND,
which only controls what the package binds at import). Sizes mirror the
tensors the ALS sweep actually touches: small enough that dispatch and
allocation overhead dominate, which is the regime the njit versions are
for.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--csv out.csv]
"""

import argparse
import csv
import sys
import time

import numpy as np

from riscade import kernels
from riscade.backend import HAVE_NUMBA

CASES = (
    ("desk", 8, 16, 8, 4),
    ("paper", 16, 32, 16, 9),
    ("large", 32, 64, 32, 16),
)


def _inputs(i, j, k, r, rng):
    a = rng.standard_normal((i, r)) + 1j * rng.standard_normal((i, r))
    b = rng.standard_normal((j, r)) + 1j * rng.standard_normal((j, r))
    c = rng.standard_normal((k, r)) + 1j * rng.standard_normal((k, r))
    y = rng.standard_normal((i, j, k)) + 1j * rng.standard_normal((i, j, k))
    return y, a, b, c


def _time(fn, args, repeat):
    fn(*args)  # warmup; compiles the njit variant on first call
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--csv", default=None, help="also write rows to this file")
    args = ap.parse_args(argv)

    impls = {
        "khatri_rao": {"numpy": kernels._khatri_rao_numpy},
        "cp_reconstruct": {"numpy": kernels._cp_reconstruct_numpy},
        "cp_fit_residual": {"numpy": kernels._cp_fit_residual_numpy},
    }
    if HAVE_NUMBA:
        impls["khatri_rao"]["numba"] = kernels._khatri_rao_numba
        impls["cp_reconstruct"]["numba"] = kernels._cp_reconstruct_numba
        impls["cp_fit_residual"]["numba"] = kernels._cp_fit_residual_numba
    else:
        print("numba not importable; timing the numpy fallback only")

    rng = np.random.default_rng(0)
    rows = []
    for case, i, j, k, r in CASES:
        y, a, b, c = _inputs(i, j, k, r, rng)
        per_kernel = {
            "khatri_rao": (a, b),
            "cp_reconstruct": (a, b, c),
            "cp_fit_residual": (y, a, b, c),
        }
        for kernel, variants in impls.items():
            call_args = per_kernel[kernel]
            times = {
                name: _time(fn, call_args, args.repeat)
                for name, fn in variants.items()
            }
            speedup = (
                times["numpy"] / times["numba"] if "numba" in times else float("nan")
            )
            rows.append(
                {
                    "case": case,
                    "shape": f"{i}x{j}x{k} rank {r}",
                    "kernel": kernel,
                    "numpy_us": times["numpy"] * 1e6,
                    "numba_us": times.get("numba", float("nan")) * 1e6,
                    "speedup": speedup,
                }
            )

    hdr = f"{'case':<7}{'shape':<18}{'kernel':<17}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}"
    print(hdr)
    print("-" * len(hdr))
    for row in rows:
        print(
            f"{row['case']:<7}{row['shape']:<18}{row['kernel']:<17}"
            f"{row['numpy_us']:>12.2f}{row['numba_us']:>12.2f}{row['speedup']:>9.2f}"
        )

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
