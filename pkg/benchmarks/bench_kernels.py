"""Compare the numba-compiled kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on inputs shaped like the Kerr preset (169 ground states,
2000 output steps).  Compilation happens once before timing.  The end-to-end
row times a 400-trajectory ensemble under each backend in a subprocess,
since the backend is fixed at import.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np
import scipy.linalg

from rotmaster import _kernels
from rotmaster.angmom import build_basis
from rotmaster.coupling import build_coupling, build_H_eff, kerr_field
from rotmaster.observables import observable_operators

ENSEMBLE_SNIPPET = """
import time, numpy as np
from rotmaster import build_coupling, kerr_field, coherent_state, run_ensemble
cs = build_coupling(12, kerr_field())
psi = coherent_state(cs.ground, 2, np.pi / 2, np.pi / 2)
grid = np.linspace(0, 20, 2000)
run_ensemble(cs, psi, grid[:5], 10, 1)
t = time.perf_counter()
run_ensemble(cs, psi, grid, 400, 1)
print(time.perf_counter() - t)
"""


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    cs = build_coupling(12, kerr_field())
    H = build_H_eff(cs)
    U = np.ascontiguousarray(scipy.linalg.expm(-0.01j * H))
    rng = np.random.default_rng(0)
    psi = rng.normal(size=cs.dim) + 1j * rng.normal(size=cs.dim)
    psi /= np.linalg.norm(psi)
    Psi = np.ascontiguousarray(rng.normal(size=(cs.dim, 32)) + 1j * rng.normal(size=(cs.dim, 32)))
    ops = observable_operators(build_basis(12))
    out = np.empty((2000, cs.dim), dtype=np.complex128)
    return {
        "advance_until (2000 steps)": lambda k: k(U, psi.copy(), 0.0, out, 0, 1999),
        "step_columns (32 cols)": lambda k: k(U, Psi),
        "expectations (6 ops x 32 cols)": lambda k: k(ops, Psi),
        "displaced_table (400 x 400)": lambda k: k(2.0, 400, 400),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-ensemble", action="store_true")
    args = ap.parse_args()

    print(f"default backend: {_kernels.BACKEND}")
    print(f"{'kernel':34s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'ratio':>8s}")
    for name, call in cases().items():
        key = name.split()[0]
        fast = getattr(_kernels, key) if _kernels.USE_NUMBA else None
        slow = _kernels.NUMPY_KERNELS[key]
        t_np = best_of(lambda: call(slow), args.repeat)
        if fast is None:
            print(f"{name:34s} {'n/a':>12s} {1e3 * t_np:12.3f}")
            continue
        call(fast)  # compile
        t_nb = best_of(lambda: call(fast), args.repeat)
        print(f"{name:34s} {1e3 * t_nb:12.3f} {1e3 * t_np:12.3f} {t_np / t_nb:8.2f}")

    if args.skip_ensemble:
        return
    row = {}
    for flag in ("0", "1"):
        env = dict(os.environ, ROTMASTER_PURE_NUMPY=flag)
        res = subprocess.run([sys.executable, "-c", ENSEMBLE_SNIPPET], env=env, capture_output=True, text=True, check=True)
        row[flag] = float(res.stdout.strip().splitlines()[-1])
    print(f"{'ensemble, 400 traj (s)':34s} {row['0']:12.3f} {row['1']:12.3f} {row['1'] / row['0']:8.2f}")


if __name__ == "__main__":
    main()
