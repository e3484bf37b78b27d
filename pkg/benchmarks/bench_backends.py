"""Timing harness: numba kernels against their pure-numpy fallbacks.

Two hot paths carry dual implementations selected by ``DIRAC_LAP_BACKEND``:

* Hankel function evaluation on large complex arrays
  (``special.hankel1_pair``)
* dense pairwise resolvent assembly (``fields.direct_dirac_matrix``)

Both variants stay importable whatever the active backend, so this script
times them in one process by rebinding the module-level switch, checks
the outputs agree, and prints a small table.

Usage::

    python benchmarks/bench_backends.py [--repeats 5] [--hankel-size 200000]
"""

import argparse
import contextlib
import math
import time

import numpy as np

from dirac_lap import _backend, fields, special
from dirac_lap.clifford import build_dirac_matrices
from dirac_lap.fields import Grid


@contextlib.contextmanager
def forced_backend(name: str):
    saved = (special.BACKEND, fields.BACKEND)
    special.BACKEND = name
    fields.BACKEND = name
    try:
        yield
    finally:
        special.BACKEND, fields.BACKEND = saved


def backends() -> list[str]:
    return ["numpy", "numba"] if _backend.HAVE_NUMBA else ["numpy"]


def best_of(repeats: int, fn) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_hankel(size: int, repeats: int, rng: np.random.Generator):
    """Arguments span the series and asymptotic regimes of the evaluator."""
    moduli = np.exp(rng.uniform(np.log(1e-3), np.log(50.0), size))
    # upper half plane only; the branch cut sits on the negative reals
    args = moduli * np.exp(1j * rng.uniform(0.0, math.pi, size))
    outputs = {}
    times = {}
    for name in backends():
        with forced_backend(name):
            special.hankel1_pair(args[:64])  # warm the JIT before timing
            outputs[name] = special.hankel1_pair(args)
            times[name] = best_of(repeats, lambda: special.hankel1_pair(args))
    return times, _disagreement(outputs)


def bench_assembly(grid: Grid, repeats: int):
    mats = build_dirac_matrices(grid.n)
    warm = Grid(grid.n, 1.0, 4)
    outputs = {}
    times = {}
    for name in backends():
        with forced_backend(name):
            fields.direct_dirac_matrix(warm, mats, 1.0, 1.7)
            outputs[name] = fields.direct_dirac_matrix(grid, mats, 1.0, 1.7)
            times[name] = best_of(
                repeats, lambda: fields.direct_dirac_matrix(grid, mats, 1.0, 1.7)
            )
    return times, _disagreement(outputs)


def _disagreement(outputs: dict) -> float:
    if len(outputs) < 2:
        return 0.0
    a, b = (np.asarray(outputs[k]) for k in sorted(outputs))
    return float(np.max(np.abs(a - b)))


def _row(label: str, size: str, times: dict, diff: float) -> str:
    t_np = times["numpy"]
    if "numba" in times:
        t_nb = times["numba"]
        return "%-28s %-14s %9.4fs %9.4fs %7.2fx %10.1e" % (
            label, size, t_np, t_nb, t_np / t_nb, diff,
        )
    return "%-28s %-14s %9.4fs %9s %7s %10s" % (label, size, t_np, "-", "-", "-")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--hankel-size", type=int, default=200_000)
    args = ap.parse_args()

    print("default backend: %s (numba available: %s)" % (
        _backend.BACKEND, _backend.HAVE_NUMBA,
    ))
    if not _backend.HAVE_NUMBA:
        print("numba not importable; timing the numpy path only")
    print()
    print("%-28s %-14s %10s %10s %8s %10s" % (
        "kernel", "size", "numpy", "numba", "speedup", "max|diff|",
    ))

    rng = np.random.default_rng(11)
    times, diff = bench_hankel(args.hankel_size, args.repeats, rng)
    print(_row("hankel1_pair", "%d args" % args.hankel_size, times, diff))

    for grid in (Grid(2, 4.0, 24), Grid(2, 4.0, 32), Grid(3, 2.0, 8)):
        times, diff = bench_assembly(grid, args.repeats)
        label = "direct_dirac_matrix (%dd)" % grid.n
        size = "%d^%d sites" % (grid.points_per_axis, grid.n)
        print(_row(label, size, times, diff))


if __name__ == "__main__":
    main()
