"""Time the compiled and pure-Python simplex kernels on the same LPs.

    python3 benchmarks/bench_kernel.py --sizes 10 30 60 --repeats 3

Each LP is the high-point relaxation of a generated market with its binaries
relaxed, solved cold. Both kernels use the same pivot rules, but summation order
differs, so near-ties can break differently on larger LPs; the optimum must agree.
"""

import argparse
import statistics
import time

from artifact._lpengine import LPEngine, kernel_module
from artifact.instgen import GroupSpec, generate, preset_overrides
from artifact.reform import build_hpr
from artifact.subsolver import BIG


def relaxed_lp(n_travelers: int, seed: int):
    inst = generate(GroupSpec.from_name(f"MaaS-{n_travelers}-5", seed=seed,
                                        overrides=preset_overrides("dense")))
    prog, _ = build_hpr(inst)
    A, lo, hi = prog.linear_arrays()
    col_lo = [max(v.lower, -BIG) for v in prog.variables]
    col_hi = [min(v.upper, BIG) for v in prog.variables]
    cost = [0.0] * prog.n_vars
    for j, c in prog.objective.items():
        cost[j] = -c
    return A.tocsc(), lo, hi, col_lo, col_hi, cost


def time_kernel(data, kernel: str, repeats: int):
    times = []
    for _ in range(repeats):
        eng = LPEngine(*data, kernel=kernel)
        t0 = time.perf_counter()
        eng.solve()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), eng.pivots, eng.objective


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 30, 60])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        kernel_module("compiled")
    except ImportError:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'travelers':>9} {'seed':>4} {'rows':>5} {'cols':>5} {'pivots':>11} "
          f"{'compiled_s':>11} {'python_s':>9} {'speedup':>8}")
    for n in args.sizes:
        for seed in range(args.seeds):
            data = relaxed_lp(n, seed)
            tc, pc, oc = time_kernel(data, "compiled", args.repeats)
            tp, pp, op = time_kernel(data, "python", args.repeats)
            if abs(oc - op) > 1e-7 * max(1.0, abs(oc)):
                raise SystemExit(f"optima differ: compiled {oc}, python {op}")
            m, k = data[0].shape
            piv = f"{pc}/{pp}"
            print(f"{n:>9} {seed:>4} {m:>5} {k:>5} {piv:>11} {tc:>11.4f} {tp:>9.4f} {tp / tc:>8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
