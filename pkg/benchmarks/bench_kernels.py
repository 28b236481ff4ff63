"""Time the element kernels with the numba and the numpy backend.

Run ``python benchmarks/bench_kernels.py [--cells 16] [--repeat 5]``. The
first numba call compiles (or loads the on-disk cache) and is excluded from
the timings. The script also checks that both backends agree.
"""

import argparse
import time

import numpy as np

from cavityeig import _kernels as kern
from cavityeig.grid import BoxDomain, build_grid
from cavityeig.permittivity import AdmissibilityBounds, element_data, random_smooth_field


def _inputs(cells):
    grid = build_grid(BoxDomain.cube(), (cells,) * 3)
    eps = random_smooth_field(grid, AdmissibilityBounds(0.5, 2.0, 50.0), np.random.default_rng(0))
    N, dN, w, cn = element_data(grid)
    u = np.random.default_rng(1).standard_normal((grid.n_nodes, 3))[cn]
    return eps.values[cn], u, N, dN, w


def _cases(eps, u, N, dN, w):
    return {
        "mass_elements": lambda b: kern.mass_elements(eps, N, dN, w, backend=b),
        "penalty_elements": lambda b: kern.penalty_elements(eps, N, dN, w, backend=b),
        "scalar_stiffness": lambda b: kern.scalar_stiffness_elements(eps, N, dN, w, backend=b),
        "frobenius_cells": lambda b: kern.frobenius_cells(eps, N, w, backend=b),
        "normal_sensitivity": lambda b: kern.normal_sensitivity(eps, N, w, backend=b),
        "outer_sensitivity": lambda b: kern.outer_sensitivity(u, N, w, backend=b),
        "penalty_sensitivity": lambda b: kern.penalty_sensitivity(eps, u, N, dN, w, backend=b),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kern.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = _cases(*_inputs(args.cells))
    print(f"{args.cells}^3 cells, best of {args.repeat}")
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases.items():
        ref = fn("numpy")
        got = fn("numba")  # warm-up / compile
        diff = np.abs(ref - got).max() / max(np.abs(ref).max(), 1e-300)
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        print(f"{name:<22}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()
