"""Time the compiled and pure-Python PMSM kernels on the same run.

Usage::

    python benchmarks/bench_kernel.py [--steps N] [--repeat R]

Both backends integrate the load-step scenario from its equilibrium, with
and without conditioning, and the script checks that they agree before
printing the timings.
"""

import argparse
import time

import numpy as np

from twoscale import kernel
from twoscale.plants import PmsmParams, load_current, pmsm_equilibrium


def best_time(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=20_000, help="RK4 steps per run (default 20000)")
    parser.add_argument("--repeat", type=int, default=3, help="runs per backend; the fastest is reported")
    args = parser.parse_args(argv)

    p = PmsmParams.reference_design()
    state0 = pmsm_equilibrium(p)
    v_ref = np.full(args.steps + 1, p.v_dc_ref)
    i_load = np.full(args.steps + 1, p.i_load)
    i_load[args.steps // 2:] = load_current(18900.0, p.v_dc_ref, p.r_load)
    prm = kernel.pack_params(p)

    backends = [("python", kernel.pmsm_run_python)]
    if kernel.compiled_available():
        backends.append(("cython", kernel.compiled_run()))
    else:
        print("compiled kernel not built; timing the Python backend only")

    print(f"{'backend':8s} {'mode':13s} {'steps':>8s} {'seconds':>10s} {'us/step':>9s}")
    for asc in (False, True):
        results = {}
        for name, run in backends:
            seconds, out = best_time(lambda: run(prm, state0, 1e-6, v_ref, i_load, asc), args.repeat)
            results[name] = (seconds, out)
            mode = "approximate" if asc else "none"
            print(f"{name:8s} {mode:13s} {args.steps:8d} {seconds:10.4f} {1e6 * seconds / args.steps:9.3f}")
        if len(results) == 2:
            states_py = results["python"][1][2]
            states_c = results["cython"][1][2]
            gap = float(np.max(np.abs(states_py - states_c)))
            speedup = results["python"][0] / results["cython"][0]
            print(f"{'':8s} speed-up {speedup:.0f}x, max state difference {gap:.1e}")


if __name__ == "__main__":
    main()
