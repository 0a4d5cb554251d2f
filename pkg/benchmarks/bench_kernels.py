"""Compare the compiled frame kernel against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--shots N] [--repeat R]
"""

import argparse
import time

import numpy as np

from repstab import preset
from repstab import _rng
from repstab.codes import CodeSpec, build
from repstab.sampling import BACKEND, compile_program, propagate

CASES = [("rep-phase", 5, 20), ("rep-phase", 11, 50), ("rep-bit", 11, 50), ("surface2", 2, 20)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shots", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if BACKEND != "compiled":
        print("compiled extension not built; only the fallback can be timed")
    noise = preset("phaseflip-device")
    print(f"{'case':<24}{'python [s]':>12}{'compiled [s]':>14}{'speedup':>10}{'shots/s':>12}  identical")
    for family, d, rounds in CASES:
        spec = CodeSpec(family, d, rounds)
        prog = compile_program(build(spec), noise)
        keys = _rng.shot_keys(1, np.arange(args.shots))
        rates = np.broadcast_to(noise.rates, (args.shots, 6))
        t_py, a = best_of(lambda: propagate(prog, rates, keys, "python"), args.repeat)
        label = f"{family} d={d} r={rounds}"
        if BACKEND == "compiled":
            t_c, b = best_of(lambda: propagate(prog, rates, keys, "compiled"), args.repeat)
            print(f"{label:<24}{t_py:>12.3f}{t_c:>14.3f}{t_py / t_c:>10.1f}{args.shots / t_c:>12.0f}  "
                  f"{bool(np.array_equal(a, b))}")
        else:
            print(f"{label:<24}{t_py:>12.3f}{'-':>14}{'-':>10}{args.shots / t_py:>12.0f}")


if __name__ == "__main__":
    main()
