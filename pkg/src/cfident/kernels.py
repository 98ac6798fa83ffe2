"""Hot numeric kernels.

Each kernel has a numba implementation and a pure-numpy implementation with
identical semantics.  The numba one is used when :mod:`cfident._jit` reports
numba as enabled; both stay importable so they can be benchmarked and
cross-checked against each other.
"""
from __future__ import annotations

import math

import numpy as np

from . import _jit
from ._jit import njit
from .expr.compile import (
    OP_ADD,
    OP_ATANH,
    OP_CONST,
    OP_EXP,
    OP_LN,
    OP_MUL,
    OP_POW,
    OP_SQRT,
    OP_TANH,
    OP_VAR,
    lambdify,
)


# ---------------------------------------------------------------------------
# tape interpreter


def _eval_tape_loop(op, cval, slot, ptr, args, out, points):
    n = op.shape[0]
    B = points.shape[0]
    res = np.empty((B, out.shape[0]))
    val = np.empty(n)
    for b in range(B):
        for i in range(n):
            code = op[i]
            if code == OP_CONST:
                val[i] = cval[i]
            elif code == OP_VAR:
                val[i] = points[b, slot[i]]
            elif code == OP_ADD:
                acc = val[args[ptr[i]]]
                for j in range(ptr[i] + 1, ptr[i + 1]):
                    acc += val[args[j]]
                val[i] = acc
            elif code == OP_MUL:
                acc = val[args[ptr[i]]]
                for j in range(ptr[i] + 1, ptr[i + 1]):
                    acc *= val[args[j]]
                val[i] = acc
            elif code == OP_POW:
                base = val[args[ptr[i]]]
                ex = val[args[ptr[i] + 1]]
                if base == 0.0 and ex <= 0.0:
                    val[i] = np.nan
                elif base < 0.0 and ex != math.floor(ex):
                    val[i] = np.nan
                else:
                    val[i] = base**ex
            else:
                x = val[args[ptr[i]]]
                if code == OP_TANH:
                    val[i] = math.tanh(x)
                elif code == OP_ATANH:
                    val[i] = math.atanh(x) if -1.0 < x < 1.0 else np.nan
                elif code == OP_LN:
                    val[i] = math.log(x) if x > 0.0 else np.nan
                elif code == OP_EXP:
                    val[i] = math.exp(x) if x < 709.0 else np.inf
                elif code == OP_SQRT:
                    val[i] = math.sqrt(x) if x >= 0.0 else np.nan
        for k in range(out.shape[0]):
            res[b, k] = val[out[k]]
    return res


_eval_tape_numba = njit(cache=True, error_model="numpy")(_eval_tape_loop) if _jit.HAVE_NUMBA else None


def eval_tape_numpy(tape, points: np.ndarray) -> np.ndarray:
    """Vectorized over points, Python loop over tape nodes."""
    B = points.shape[0]
    n = len(tape.op)
    val = np.empty((n, B))
    op, ptr, args = tape.op, tape.ptr, tape.args
    with np.errstate(all="ignore"):
        for i in range(n):
            code = op[i]
            if code == OP_CONST:
                val[i] = tape.cval[i]
            elif code == OP_VAR:
                val[i] = points[:, tape.slot[i]]
            else:
                a = args[ptr[i] : ptr[i + 1]]
                if code == OP_ADD:
                    val[i] = val[a].sum(axis=0) if len(a) > 2 else val[a[0]] + val[a[1]]
                elif code == OP_MUL:
                    acc = val[a[0]].copy()
                    for j in a[1:]:
                        acc *= val[j]
                    val[i] = acc
                elif code == OP_POW:
                    base, ex = val[a[0]], val[a[1]]
                    r = np.power(base, ex)
                    bad = ((base == 0.0) & (ex <= 0.0)) | ((base < 0.0) & (ex != np.floor(ex)))
                    r[bad] = np.nan
                    val[i] = r
                elif code == OP_TANH:
                    val[i] = np.tanh(val[a[0]])
                elif code == OP_ATANH:
                    x = val[a[0]]
                    val[i] = np.where(np.abs(x) < 1.0, np.arctanh(np.clip(x, -1.0, 1.0)), np.nan)
                elif code == OP_LN:
                    x = val[a[0]]
                    val[i] = np.where(x > 0.0, np.log(np.abs(x)), np.nan)
                elif code == OP_EXP:
                    val[i] = np.exp(val[a[0]])
                elif code == OP_SQRT:
                    x = val[a[0]]
                    val[i] = np.where(x >= 0.0, np.sqrt(np.abs(x)), np.nan)
    return val[tape.out].T.copy()


def eval_tape_numba(tape, points: np.ndarray) -> np.ndarray:
    if _eval_tape_numba is None:
        raise RuntimeError("numba backend is disabled")
    return _eval_tape_numba(tape.op, tape.cval, tape.slot, tape.ptr, tape.args, tape.out, points)


def eval_tape(tape, points: np.ndarray, backend: str | None = None) -> np.ndarray:
    backend = backend or _jit.backend()
    if backend == "numba":
        return eval_tape_numba(tape, points)
    return eval_tape_numpy(tape, points)


# ---------------------------------------------------------------------------
# forward-Euler car-following simulation
#
# run(theta[B, p], s0, v0, u[K+1], dt) -> (s[B, K+1], v[B, K+1], status[B])
# status[b] == 0 on success, otherwise k+1 for the first step k whose update
# produced a non-finite state; entries from that step on are NaN.


def _make_euler_numba(accel):
    accel_jit = njit(inline="always", error_model="numpy")(accel)

    @njit(error_model="numpy")
    def run(theta, s0, v0, u, dt):
        B = theta.shape[0]
        n = u.shape[0]
        out_s = np.empty((B, n))
        out_v = np.empty((B, n))
        status = np.zeros(B, dtype=np.int64)
        for b in range(B):
            th = theta[b]
            s = s0
            v = v0
            out_s[b, 0] = s
            out_v[b, 0] = v
            for k in range(n - 1):
                a = accel_jit(s, v, u[k], th)
                s_next = s + dt * (u[k] - v)
                v = v + dt * a
                s = s_next
                if not (math.isfinite(s) and math.isfinite(v)):
                    status[b] = k + 1
                    for j in range(k + 1, n):
                        out_s[b, j] = np.nan
                        out_v[b, j] = np.nan
                    break
                out_s[b, k + 1] = s
                out_v[b, k + 1] = v
        return out_s, out_v, status

    return run


def _make_euler_numpy(accel):
    def run(theta, s0, v0, u, dt):
        th = np.ascontiguousarray(theta.T)
        B = theta.shape[0]
        n = u.shape[0]
        out_s = np.empty((B, n))
        out_v = np.empty((B, n))
        s = np.full(B, float(s0))
        v = np.full(B, float(v0))
        out_s[:, 0] = s
        out_v[:, 0] = v
        with np.errstate(all="ignore"):
            for k in range(n - 1):
                a = accel(s, v, u[k], th)
                s, v = s + dt * (u[k] - v), v + dt * a
                out_s[:, k + 1] = s
                out_v[:, k + 1] = v
        bad = ~(np.isfinite(out_s) & np.isfinite(out_v))
        status = np.where(bad.any(axis=1), bad.argmax(axis=1), 0).astype(np.int64)
        for b in np.flatnonzero(status):
            out_s[b, status[b] :] = np.nan
            out_v[b, status[b] :] = np.nan
        return out_s, out_v, status

    return run


class EulerKernel:
    """Batched forward-Euler integrator for one acceleration law.

    The acceleration expression is compiled once to straight-line code with
    signature ``accel(s, v, u, theta)`` and wrapped by the backend's driver.
    """

    def __init__(self, accel_expr, param_names, backend: str | None = None):
        self.backend = backend or _jit.backend()
        self.param_names = tuple(param_names)
        self.accel = lambdify(accel_expr, ["s", "v", "u"], ("theta", self.param_names), name="accel")
        if self.backend == "numba":
            if not _jit.HAVE_NUMBA:
                raise RuntimeError("numba backend is disabled")
            self._run = _make_euler_numba(self.accel)
        else:
            self._run = _make_euler_numpy(self.accel)

    def __call__(self, theta: np.ndarray, s0: float, v0: float, u: np.ndarray, dt: float):
        theta = np.ascontiguousarray(np.atleast_2d(np.asarray(theta, dtype=np.float64)))
        u = np.ascontiguousarray(np.asarray(u, dtype=np.float64))
        return self._run(theta, float(s0), float(v0), u, float(dt))


_KERNELS: dict = {}


def euler_kernel(accel_expr, param_names, backend: str | None = None) -> EulerKernel:
    backend = backend or _jit.backend()
    key = (accel_expr.digest, tuple(param_names), backend)
    k = _KERNELS.get(key)
    if k is None:
        k = _KERNELS[key] = EulerKernel(accel_expr, param_names, backend)
    return k
