"""Time the compiled kernels against the numpy fallback on step-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]

Inputs mimic one ensemble step: 1000 configurations of 5 bosons on a
256-point grid. Also times a full Hermitian-limit step under each backend.
"""

import argparse
import importlib
import os
import timeit

import numpy as np

from pilotwaves import _kernels_py

try:
    from pilotwaves import _kernels as compiled
except ImportError:
    compiled = None


def inputs(n_rows=5000, n=256, seed=0):
    rng = np.random.default_rng(seed)
    coeffs = (rng.normal(size=(n_rows, n)) + 1j * rng.normal(size=(n_rows, n))) / n
    theta = rng.uniform(0.0, 32.0, n_rows)
    dk = 2 * np.pi / 32.0
    mult = 1j * dk * np.fft.fftfreq(n, d=1.0 / n)
    mult[n // 2] = 0.0
    phase = rng.uniform(-1, 1, size=(1000, 5, n))
    return coeffs, theta, mult, dk, phase


def time_backend(mod, repeat):
    coeffs, theta, mult, dk, phase = inputs()
    cases = {
        "trig_eval_paired": lambda: mod.trig_eval_paired(coeffs, theta, dk),
        "trig_eval_paired2": lambda: mod.trig_eval_paired2(coeffs, theta, mult, dk),
        "trig_eval_shared": lambda: mod.trig_eval_shared(coeffs[:8], theta[:500], dk),
        "expi": lambda: mod.expi(phase),
    }
    return {k: min(timeit.repeat(f, number=1, repeat=repeat)) for k, f in cases.items()}


def time_step(pure: bool, repeat: int) -> float:
    if pure:
        os.environ["PILOTWAVES_PURE_PYTHON"] = "1"
    else:
        os.environ.pop("PILOTWAVES_PURE_PYTHON", None)
    import pilotwaves.kernels
    importlib.reload(pilotwaves.kernels)
    for name in ("grid", "ipw"):
        importlib.reload(importlib.import_module(f"pilotwaves.{name}"))
    from pilotwaves.grid import Grid1D
    from pilotwaves.ipw import HERMITIAN_LIMIT, ipw_step, make_ensemble
    from pilotwaves.model import PairInteractionSpec, SystemSpec, trap_ground_state

    g = Grid1D()
    s = SystemSpec(5, interaction=PairInteractionSpec("harmonic", 0.1))
    ens = make_ensemble(s, g, None, trap_ground_state(s.trap, g), 1000, seed=0)
    return min(timeit.repeat(lambda: ipw_step(ens, 0.005, HERMITIAN_LIMIT), number=1,
                             repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    py = time_backend(_kernels_py, args.repeat)
    cy = time_backend(compiled, args.repeat) if compiled else None
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>9}")
    for k, t in py.items():
        if cy:
            print(f"{k:<20}{1e3 * t:>12.2f}{1e3 * cy[k]:>13.2f}{t / cy[k]:>9.2f}")
        else:
            print(f"{k:<20}{1e3 * t:>12.2f}{'n/a':>13}")
    r = max(3, args.repeat // 5)
    tp = time_step(True, r)
    line = f"{'hermitian step':<20}{1e3 * tp:>12.1f}"
    if compiled:
        tc = time_step(False, r)
        line += f"{1e3 * tc:>13.1f}{tp / tc:>9.2f}"
    print(line)


if __name__ == "__main__":
    main()
