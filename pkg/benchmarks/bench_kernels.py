"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Both backends are imported directly, so the result does not depend on
FEDCL_PURE_PYTHON. Workloads mirror one client's per-round work: Lambert W on
one value per local sample, and an EM fit on the client's difficulty scores.
"""
import argparse
import timeit

import numpy as np

from fedcl._backend import compiled_kernels, python_kernels
from fedcl.gmm import VARIANCE_FLOOR


def workloads(quick=False):
    rng = np.random.default_rng(0)
    small = 200 if quick else 500
    x_w = np.ascontiguousarray(rng.uniform(-1 / np.e, 5.0, 20 * small))
    x_em = np.ascontiguousarray(np.concatenate([rng.normal(-27, 0.3, small), rng.normal(-20, 2.0, small // 2)]))
    init = (np.full(3, 1 / 3), np.quantile(x_em, [0.2, 0.5, 0.8]), np.full(3, x_em.var()))
    return {
        f"lambertw n={len(x_w)}": lambda k: k.lambertw(x_w, 1e-12, 100),
        "lambertw n=1 (scalar call)": lambda k: k.lambertw(x_w[:1], 1e-12, 100),
        f"em_fit n={len(x_em)} L=3": lambda k: k.em_fit(x_em, *(a.copy() for a in init), 200, 1e-7,
                                                          VARIANCE_FLOOR),
    }


def run(repeat=5, quick=False):
    backends = {"python": python_kernels}
    if compiled_kernels is not None:
        backends["cython"] = compiled_kernels
    rows = []
    for name, fn in workloads(quick).items():
        times = {}
        for label, mod in backends.items():
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times[label] = min(timer.repeat(repeat, number)) / number
        rows.append((name, times))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    rows = run(args.repeat, args.quick)
    print(f"{'workload':32s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for name, t in rows:
        py = t["python"]
        cy = t.get("cython")
        cy_s = f"{cy * 1e6:10.1f}us" if cy is not None else f"{'n/a':>12s}"
        sp = f"{py / cy:7.1f}x" if cy is not None else f"{'':>8s}"
        print(f"{name:32s} {py * 1e6:10.1f}us {cy_s} {sp}")
    if compiled_kernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
