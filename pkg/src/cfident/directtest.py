"""Numerical direct test for practical identifiability.

For one fully specified experiment, look for two parameter vectors that are
as far apart as possible while their outputs stay within ``eps`` of each
other::

    maximize    d(theta1, theta2)
    subject to  e(theta1, theta2) <= eps,  both vectors inside the box

``d`` is the box-normalised Euclidean distance scaled into [0, 1] and ``e``
the mean squared output difference.  A large optimum means the experiment
cannot tell the two vectors apart.

The solver is a generalised pattern search in normalised coordinates
``z = (z1, z2)`` in [0, 1]^(2n).  Every start sits on the diagonal
``z1 == z2``, where ``e == 0``, so it is feasible, and infeasible trial points
are simply rejected.  Besides the coordinate directions the poll also moves
both vectors together (``+-(e_i, e_i)``) or apart (``+-(e_i, -e_i)``), and a
trial that keeps ``d`` but lowers ``e`` counts as progress.  Together these
let the pair slide along a valley of indistinguishable parameters instead of
stalling at the first point where the constraint binds.
"""
from __future__ import annotations

import csv
import math
import os
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .models import ModelSpec, display_name
from .simulate import Scenario, batch_outputs, output_error, simulate_batch

UNIDENTIFIABLE_ABOVE = 0.3
IDENTIFIABLE_BELOW = 0.1
VERDICT_CAVEAT = (
    "delta* is a lower bound from a local optimizer; the bands "
    f"(> {UNIDENTIFIABLE_ABOVE} unidentifiable, < {IDENTIFIABLE_BELOW} identifiable) are a convention, "
    "no universal cutoff exists across models"
)

DEFAULT_EPS_GRID = tuple(float(x) for x in np.logspace(-6, 0, 13))

_TIE = 1e-12
_SEARCH_SCALES = np.array([1.0, 2.0, 4.0])
_SEARCH_LAGS = (1, 2, 4, 8)
_HISTORY = 9
_MODEL_MESH = 1e-3  # model steps only once the poll has stalled this far down
_BACKTRACK = 0.5 ** np.arange(6)  # restoration step lengths, relative to the Gauss-Newton step
_RETREAT_GAIN = 0.75  # a retreat must cut e at least this much
_RETREAT_SLACK = 1e-4  # relative loss in d a retreat may cost


def distance(theta1, theta2, lower, upper) -> float:
    """Box-normalised distance; equals 1 between opposite corners."""
    t1, t2 = np.asarray(theta1, float), np.asarray(theta2, float)
    span = np.asarray(upper, float) - np.asarray(lower, float)
    r = (t1 - t2) / span
    return float(np.sqrt(np.sum(r * r) / r.size))


def verdict(delta: float) -> str:
    if delta > UNIDENTIFIABLE_ABOVE:
        return "practically unidentifiable"
    if delta < IDENTIFIABLE_BELOW:
        return "practically identifiable"
    return "inconclusive"


@dataclass(frozen=True)
class GPSSettings:
    initial_mesh: float = 0.25
    expand: float = 2.0
    contract: float = 0.5
    mesh_tol: float = 1e-6
    max_mesh: float = 1.0
    max_evals: int = 20_000
    starts: int = 16
    seed: int = 0
    directions: str = "paired"  # or "coordinate"
    search: bool = True  # extrapolation and model search steps

    def __post_init__(self):
        if not (0 < self.contract < 1 <= self.expand):
            raise ValueError("need 0 < contract < 1 <= expand")
        if not 0 < self.mesh_tol < self.initial_mesh <= self.max_mesh:
            raise ValueError("need 0 < mesh_tol < initial_mesh <= max_mesh")
        if self.max_evals < 1 or self.starts < 1:
            raise ValueError("max_evals and starts must be positive")
        if self.directions not in ("paired", "coordinate"):
            raise ValueError(f"unknown direction set {self.directions!r}")


@dataclass(frozen=True)
class DirectTestProblem:
    model: ModelSpec
    scenario: Scenario
    eps: float
    settings: GPSSettings = field(default_factory=GPSSettings)
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        lo = self.model.lower if self.lower is None else np.asarray(self.lower, float)
        hi = self.model.upper if self.upper is None else np.asarray(self.upper, float)
        if lo.shape != (self.model.n_params,) or hi.shape != lo.shape or np.any(hi <= lo):
            raise ValueError("bounds must give lower < upper for every parameter")
        object.__setattr__(self, "lower", tuple(map(float, lo)))
        object.__setattr__(self, "upper", tuple(map(float, hi)))

    @property
    def n(self) -> int:
        return self.model.n_params

    def thetas(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.array(self.lower), np.array(self.upper)
        z = np.atleast_2d(z)
        n = self.n
        t1 = np.clip(lo + z[:, :n] * (hi - lo), lo, hi)
        t2 = np.clip(lo + z[:, n:] * (hi - lo), lo, hi)
        return t1, t2


@dataclass
class StartResult:
    index: int
    z: np.ndarray
    delta: float
    error: float
    evaluations: int
    polls: int
    mesh: float


@dataclass
class DirectTestResult:
    model: str
    param_names: list[str]
    eps: float
    theta1: np.ndarray
    theta2: np.ndarray
    delta: float
    error: float
    evaluations: int
    best_start: int
    feasible: bool
    starts: list[StartResult] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return verdict(self.delta) if self.feasible else "infeasible"

    def to_dict(self) -> dict:
        d = {
            "model": self.model,
            "eps": self.eps,
            "delta": self.delta,
            "error": self.error,
            "feasible": self.feasible,
            "verdict": self.verdict,
            "evaluations": self.evaluations,
            "best_start": self.best_start,
            "starts": len(self.starts),
        }
        for name, a, b in zip(self.param_names, self.theta1, self.theta2):
            d[f"theta1.{name}"] = float(a)
            d[f"theta2.{name}"] = float(b)
        return d


class _Evaluator:
    """Output errors for batches of normalised pairs, caching trajectories."""

    def __init__(self, p: DirectTestProblem, backend=None, cache_size: int = 4096):
        self.p = p
        self.backend = backend
        self.cache: OrderedDict[bytes, np.ndarray | None] = OrderedDict()
        self.cache_size = cache_size

    def _outputs(self, thetas: np.ndarray) -> list:
        keys = [t.tobytes() for t in thetas]
        missing, seen = [], set()
        for k, t in zip(keys, thetas):
            if k not in self.cache and k not in seen:
                seen.add(k)
                missing.append(t)
        if missing:
            s, v, status = simulate_batch(self.p.model, self.p.scenario, np.array(missing), self.backend)
            Y = batch_outputs(self.p.scenario, s, v)
            for t, y, st in zip(missing, Y, status):
                self.cache[t.tobytes()] = None if st else y
        out = []
        for k in keys:
            self.cache.move_to_end(k)
            out.append(self.cache[k])
        while len(self.cache) > self.cache_size:
            self.cache.popitem(last=False)
        return out

    def residual(self, z: np.ndarray) -> np.ndarray | None:
        """Flattened ``(y1 - y2)/sqrt(K+1)``, so that ``e`` is its squared norm."""
        t1, t2 = self.p.thetas(z)
        a, b = self._outputs(np.concatenate([t1, t2]))
        if a is None or b is None:
            return None
        return ((a - b) / math.sqrt(len(a))).ravel()

    def errors(self, Z: np.ndarray) -> np.ndarray:
        """``e`` per row of ``Z``; ``inf`` where a simulation failed."""
        t1, t2 = self.p.thetas(Z)
        ys = self._outputs(np.concatenate([t1, t2]))
        m = len(Z)
        e = np.empty(m)
        for i in range(m):
            a, b = ys[i], ys[m + i]
            if a is None or b is None:
                e[i] = np.inf
            else:
                d = a - b
                e[i] = np.mean(np.sum(d * d, axis=1))
        return e


def _directions(n: int, kind: str) -> np.ndarray:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    blocks = [np.hstack([eye, zero]), np.hstack([zero, eye])]
    if kind == "paired":
        blocks += [np.hstack([eye, eye]), np.hstack([eye, -eye])]
    D = np.vstack(blocks)
    return np.vstack([D, -D])


def _dist(Z: np.ndarray, n: int) -> np.ndarray:
    r = Z[:, :n] - Z[:, n:]
    return np.sqrt(np.sum(r * r, axis=1) / n)


def _pick(trial, et, d, e, eps, n) -> int:
    """Index of the best acceptable feasible trial, or -1.

    Acceptable means a larger ``d``, or the same ``d`` with a smaller ``e``.
    Among those the largest ``d`` wins, then the smallest ``e``.
    """
    dt = _dist(trial, n)
    ok = (et <= eps) & ((dt > d + _TIE) | ((dt >= d - _TIE) & (et < e)))
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return -1
    return int(idx[np.lexsort((et[idx], -dt[idx]))[0]])


def _restoration_steps(ev: "_Evaluator", z: np.ndarray, d: float, n: int, h: float = 1e-7) -> np.ndarray:
    """Gauss-Newton steps that shrink ``e`` while holding ``d`` to first order.

    ``e`` is a mean of squared output residuals, so a finite-difference
    Jacobian of the residual trajectory (one extra simulation per
    coordinate) gives a well-conditioned local model even deep inside a
    narrow valley, where the gradient of ``e`` alone points across it.
    The step solves the linearised least-squares problem restricted to the
    level set of ``d`` and to coordinates not pinned on a bound.
    """
    m2 = 2 * n
    r0 = ev.residual(z)
    if r0 is None:
        return np.empty((0, m2))
    cols = []
    for k in range(m2):
        hk = h if z[k] + h <= 1.0 else -h
        zk = z.copy()
        zk[k] += hk
        rk = ev.residual(zk)
        if rk is None:
            return np.empty((0, m2))
        cols.append((rk - r0) / hk)
    J = np.array(cols).T
    diff = z[:n] - z[n:]
    gd = np.concatenate([diff, -diff])
    free = (z > 0.0) & (z < 1.0)
    if not free.any():
        return np.empty((0, m2))
    # basis of {x : gd.x = 0, x_k = 0 on pinned coordinates}
    g = gd[free]
    B = np.eye(int(free.sum()))
    if np.any(g):
        q, _ = np.linalg.qr(np.column_stack([g, B]))
        B = q[:, 1:]
    x_free = B @ np.linalg.lstsq(J[:, free] @ B, -r0, rcond=None)[0]
    x = np.zeros(m2)
    x[free] = x_free
    if not np.any(x):
        return np.empty((0, m2))
    return np.clip(z + np.outer(_BACKTRACK, x), 0.0, 1.0)


def _pattern_search(p: DirectTestProblem, z0: np.ndarray, index: int, ev: _Evaluator) -> StartResult:
    s = p.settings
    n = p.n
    m2 = 2 * n
    D = _directions(n, s.directions)  # rows 0..2n-1 are +e_k, rows len/2.. are their negatives
    z = np.clip(np.asarray(z0, float), 0.0, 1.0)
    e = float(ev.errors(z[None, :])[0])
    if not e <= p.eps:
        return StartResult(index, z, -1.0, e, 1, 0, s.initial_mesh)
    d = float(_dist(z[None, :], n)[0])
    mesh = s.initial_mesh
    evals, polls = 1, 0
    history = [z]  # recent accepted iterates, newest last

    best = (d, -e, z)

    def accept(zn, dn, en):
        nonlocal z, d, e, history, best
        z, d, e = zn, float(dn), float(en)
        history = (history + [z])[-_HISTORY:]
        if (d, -e) > best[:2]:
            best = (d, -e, z)

    def try_points(trial):
        nonlocal evals
        trial = trial[np.any(trial != z, axis=1)][: s.max_evals - evals]
        if len(trial) == 0:
            return False
        et = ev.errors(trial)
        evals += len(trial)
        i = _pick(trial, et, d, e, p.eps, n)
        if i < 0:
            return False
        accept(trial[i], _dist(trial[i : i + 1], n)[0], et[i])
        return True

    def try_retreat(trial):
        nonlocal evals
        trial = trial[np.any(trial != z, axis=1)][: s.max_evals - evals]
        if len(trial) == 0:
            return False
        et = ev.errors(trial)
        evals += len(trial)
        dt = _dist(trial, n)
        ok = (et <= p.eps) & (et <= _RETREAT_GAIN * e) & (dt >= d * (1.0 - _RETREAT_SLACK))
        if not ok.any():
            return False
        i = int(np.flatnonzero(ok)[np.argmax(dt[ok])])
        accept(trial[i], dt[i], et[i])
        return True

    while mesh > s.mesh_tol and evals < s.max_evals:
        polls += 1
        # search step: extrapolate along the displacement over the last few
        # accepted iterates, which follows a curved valley better than any
        # single poll direction
        if s.search and len(history) > 1:
            steps = np.array([z - history[-1 - k] for k in _SEARCH_LAGS if k < len(history)])
            trial = np.clip(z + (_SEARCH_SCALES[:, None, None] * steps[None]).reshape(-1, m2), 0.0, 1.0)
            if try_points(trial):
                continue
        # complete poll, evaluated as one batch
        trial = np.clip(z + mesh * D, 0.0, 1.0)
        moved = np.any(trial != z, axis=1)
        budget = s.max_evals - evals
        if budget < int(moved.sum()):
            moved &= np.cumsum(moved) <= budget
        et = np.full(len(trial), e)
        if moved.any():
            et[moved] = ev.errors(trial[moved])
            evals += int(moved.sum())
        i = _pick(trial[moved], et[moved], d, e, p.eps, n)
        if i >= 0:
            j = np.flatnonzero(moved)[i]
            accept(trial[j], _dist(trial[j : j + 1], n)[0], et[j])
            mesh = min(mesh * s.expand, s.max_mesh)
            continue
        if s.search and 0.0 < e and mesh <= _MODEL_MESH and evals < s.max_evals:
            steps = _restoration_steps(ev, z, d, n)
            evals += 2 * n
            if len(steps) and try_retreat(steps):
                continue
        mesh *= s.contract
    d, e, z = best[0], -best[1], best[2]
    return StartResult(index, z, d, e, evals, polls, mesh)


def _run_starts(p: DirectTestProblem, starts: list[tuple[int, np.ndarray]], backend=None) -> list[StartResult]:
    ev = _Evaluator(p, backend)
    return [_pattern_search(p, z0, i, ev) for i, z0 in starts]


def start_points(p: DirectTestProblem, count: int | None = None, seed: int | None = None) -> list[np.ndarray]:
    """Diagonal starts ``z1 == z2`` drawn uniformly in the box."""
    count = p.settings.starts if count is None else count
    rng = np.random.default_rng(p.settings.seed if seed is None else seed)
    pts = rng.uniform(0.0, 1.0, size=(count, p.n))
    return [np.concatenate([x, x]) for x in pts]


def normalise(p: DirectTestProblem, theta1, theta2) -> np.ndarray:
    lo, hi = np.array(p.lower), np.array(p.upper)
    return np.concatenate([(np.asarray(theta1) - lo) / (hi - lo), (np.asarray(theta2) - lo) / (hi - lo)])


def solve(
    p: DirectTestProblem,
    jobs: int = 1,
    warm: Sequence[np.ndarray] = (),
    backend=None,
) -> DirectTestResult:
    """Multistart pattern search over warm starts followed by seeded diagonal starts.

    Results are merged by start index, so the outcome depends on the seed but
    not on ``jobs``.
    """
    zs = [np.asarray(w, float) for w in warm] + start_points(p)
    starts = list(enumerate(zs))
    if jobs > 1 and len(starts) > 1:
        chunks = [starts[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_starts, [p] * len(chunks), chunks, [backend] * len(chunks)))
        results = sorted((r for part in parts for r in part), key=lambda r: r.index)
    else:
        results = _run_starts(p, starts, backend)
    return _merge(p, results, backend)


def _merge(p: DirectTestProblem, results: list[StartResult], backend=None) -> DirectTestResult:
    m = p.model
    total = sum(r.evaluations for r in results)
    order = sorted(
        (r for r in results if r.delta >= 0 and r.error <= p.eps),
        key=lambda r: (-r.delta, r.index),
    )
    for r in order:
        t1, t2 = p.thetas(r.z)
        t1, t2 = t1[0], t2[0]
        # recheck end to end with a fresh, bounds-checked simulation
        try:
            e = output_error(m, p.scenario, t1, t2, backend)
        except Exception:
            continue
        if e <= p.eps:
            return DirectTestResult(
                display_name(m), m.param_names, p.eps, t1, t2,
                distance(t1, t2, p.lower, p.upper), e, total, r.index, True, results,
            )
    nan = np.full(m.n_params, np.nan)
    return DirectTestResult(display_name(m), m.param_names, p.eps, nan, nan, float("nan"), float("nan"),
                            total, -1, False, results)


# ---------------------------------------------------------------------------
# eps sweep


@dataclass
class SweepPoint:
    eps: float
    delta: float
    error: float
    theta1: np.ndarray
    theta2: np.ndarray
    feasible: bool
    carried: bool = False  # True when the previous eps incumbent was better
    raw_delta: float = float("nan")
    failure: str = ""


@dataclass
class SensitivityCurve:
    model: str
    param_names: list[str]
    points: list[SweepPoint]

    @property
    def eps(self) -> np.ndarray:
        return np.array([pt.eps for pt in self.points])

    @property
    def delta(self) -> np.ndarray:
        return np.array([pt.delta for pt in self.points])

    def to_csv(self, path: str | os.PathLike, header_extra: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_extra:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(
                ["eps", "delta", "error", "feasible", "carried"]
                + [f"theta1.{n}" for n in self.param_names]
                + [f"theta2.{n}" for n in self.param_names]
            )
            for pt in self.points:
                w.writerow(
                    [f"{pt.eps:.6g}", f"{pt.delta:.10g}", f"{pt.error:.6g}", int(pt.feasible), int(pt.carried)]
                    + [f"{x:.10g}" for x in pt.theta1]
                    + [f"{x:.10g}" for x in pt.theta2]
                )


def sweep(
    p: DirectTestProblem,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    fresh_starts: int | None = None,
    jobs: int = 1,
    backend=None,
) -> SensitivityCurve:
    """Solve across an increasing ``eps`` grid.

    The first ``eps`` gets the full multistart of ``p.settings``, so a
    one-point grid reproduces :func:`solve`.  Each later ``eps`` is
    warm-started from the previous optimum plus ``fresh_starts`` new diagonal
    starts (seeded per grid index).  A pair
    feasible at one ``eps`` stays feasible at any larger one, so the reported
    curve carries the incumbent forward whenever a solve comes back lower.
    """
    eps_grid = [float(x) for x in eps_grid]
    if any(b <= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps grid must be strictly increasing")
    fresh = p.settings.starts if fresh_starts is None else fresh_starts
    m = p.model
    points: list[SweepPoint] = []
    inc: SweepPoint | None = None
    for i, eps in enumerate(eps_grid):
        starts = p.settings.starts if inc is None else max(fresh, 1)
        sub = replace(p, eps=eps, settings=replace(p.settings, starts=starts, seed=p.settings.seed + i))
        warm = [normalise(p, inc.theta1, inc.theta2)] if inc is not None else []
        try:
            res = solve(sub, jobs=jobs, warm=warm, backend=backend)
        except Exception as err:  # keep the curve going
            res = None
            failure = f"{type(err).__name__}: {err}"
        else:
            failure = "" if res.feasible else "no feasible pair"
        if res is not None and res.feasible and (inc is None or res.delta >= inc.delta):
            pt = SweepPoint(eps, res.delta, res.error, res.theta1, res.theta2, True, False, res.delta)
        elif inc is not None:
            raw = res.delta if res is not None and res.feasible else float("nan")
            pt = replace(inc, eps=eps, carried=True, raw_delta=raw, failure=failure)
        else:
            nan = np.full(m.n_params, np.nan)
            pt = SweepPoint(eps, float("nan"), float("nan"), nan, nan, False, False, float("nan"), failure)
        points.append(pt)
        if pt.feasible:
            inc = pt
    return SensitivityCurve(display_name(m), m.param_names, points)


__all__ = [
    "DEFAULT_EPS_GRID",
    "DirectTestProblem",
    "DirectTestResult",
    "GPSSettings",
    "SensitivityCurve",
    "SweepPoint",
    "VERDICT_CAVEAT",
    "distance",
    "normalise",
    "solve",
    "start_points",
    "sweep",
    "verdict",
]
