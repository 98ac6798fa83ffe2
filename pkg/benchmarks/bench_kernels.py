"""Compare the numba and pure-numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times O_I tape evaluation (IDM gap-and-speed, the largest tape) and batched
Euler simulation for every builtin model, on both backends, and checks that
the two backends agree.
"""
import argparse
import timeit

import numpy as np

from cfident import _jit
from cfident.kernels import eval_tape, euler_kernel
from cfident.models import BUILTINS, builtin_model
from cfident.simulate import lead_profile
from cfident.structural import GAP_AND_SPEED, oi_matrix


def best(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_tape(repeat, n_points):
    m = builtin_model("idm")
    M = oi_matrix(m, GAP_AND_SPEED)
    tape = M.tape
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.5, 3.0, size=(n_points, len(M.variables)))
    out = {b: eval_tape(tape, pts, b) for b in ("numba", "numpy")}
    agree = np.allclose(out["numba"], out["numpy"], rtol=1e-12, atol=0, equal_nan=True)
    times = {b: best(lambda b=b: eval_tape(tape, pts, b), repeat) for b in ("numba", "numpy")}
    return f"O_I tape IDM ({M.size()} nodes) x {n_points} points", times, agree


def bench_euler(name, repeat, batch):
    m = builtin_model(name)
    u = lead_profile().samples(80.0, 0.1, 800)
    rng = np.random.default_rng(1)
    theta = rng.uniform(m.lower, m.upper, size=(batch, m.n_params))
    kern = {b: euler_kernel(m.f_cf, m.param_names, b) for b in ("numba", "numpy")}
    res = {b: kern[b](theta, 72.7, 32.5, u, 0.1) for b in kern}
    agree = np.allclose(res["numba"][0], res["numpy"][0], rtol=1e-12, atol=1e-12, equal_nan=True)
    times = {b: best(lambda b=b: kern[b](theta, 72.7, 32.5, u, 0.1), repeat) for b in kern}
    return f"Euler {m.name} 800 steps x {batch} thetas", times, agree


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--points", type=int, default=20)
    args = ap.parse_args()
    if not _jit.HAVE_NUMBA:
        raise SystemExit("numba is disabled (CFIDENT_NUMBA=0 or not installed); nothing to compare")
    rows = [bench_tape(args.repeat, args.points)]
    rows += [bench_euler(n, args.repeat, args.batch) for n in BUILTINS]
    rows += [bench_euler(n, args.repeat, 1) for n in BUILTINS]
    w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{w}}  {'numba [ms]':>11}  {'numpy [ms]':>11}  {'speed-up':>8}  agree")
    for label, t, agree in rows:
        print(f"{label:<{w}}  {t['numba'] * 1e3:11.3f}  {t['numpy'] * 1e3:11.3f}  {t['numpy'] / t['numba']:8.1f}  {agree}")


if __name__ == "__main__":
    main()
