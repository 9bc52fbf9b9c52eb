"""Compare the compiled and pure-Python kernels: the low-order operator
and the limited element projection.

Usage: python3 benchmarks/bench_kernels.py [max_level]
"""
import sys

from idpamr.kernel_bench import time_kernels, time_projection


def main(max_level=7):
    print(f"{'system':>18} {'dofs':>7} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8} {'max diff':>9}")
    for system in ("shallow_water", "euler"):
        for level in range(4, max_level + 1):
            r = time_kernels(system, level=level)
            py = r["times"]["python"] * 1e3
            cy = r["times"].get("cython", float("nan")) * 1e3
            print(f"{system:>18} {r['n_dofs']:>7} {py:>12.3f} {cy:>12.3f} {py / cy:>8.1f} {r['max_abs_diff']:>9.1e}")
    print()
    print(f"{'projection':>18} {'cells':>7} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8} {'max diff':>9}")
    for system in ("shallow_water", "euler"):
        for p in (1, 2):
            r = time_projection(system, p=p)
            py = r["times"]["python"] * 1e3
            cy = r["times"].get("cython", float("nan")) * 1e3
            label = f"{system} p={p}"
            print(f"{label:>18} {r['n_cells']:>7} {py:>12.3f} {cy:>12.3f} {py / cy:>8.1f} {r['max_abs_diff']:>9.1e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 7)
