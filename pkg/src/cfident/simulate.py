"""Fixed-step simulation of the car-following plant and the output-error
functional built on it.

The integrator is explicit Euler on a uniform grid ``t_k = k*dt``,
``k = 0..K``::

    s[k+1] = s[k] + dt*(u(t_k) - v[k])
    v[k+1] = v[k] + dt*f_CF(s[k], v[k], u(t_k); theta)

Nothing here adapts the step: the error values are meant to match a plain
Euler discretisation, so a better integrator would give different numbers.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import DomainError, evaluate
from .kernels import euler_kernel
from .models import INPUT_NAME, ModelSpec, State, display_name, equilibrium_ic
from .structural import GAP, GAP_AND_SPEED, OUTPUTS

DEFAULT_T = 80.0
DEFAULT_DT = 0.1


class SimulationError(DomainError):
    """A run that left the model domain or blew up.

    ``step`` is the index k of the Euler update that failed (the state at
    ``t_k`` was finite, the one at ``t_{k+1}`` was not) and ``kind`` is
    ``"domain"`` or ``"blow-up"``.
    """

    def __init__(self, message: str, step: int, kind: str, state=None, theta=None):
        super().__init__(message)
        self.step = step
        self.kind = kind
        self.state = state
        self.theta = theta


# ---------------------------------------------------------------------------
# input profiles


class InputProfile:
    kind = "abstract"

    def __call__(self, t):
        raise NotImplementedError

    def samples(self, T: float, dt: float, K: int) -> np.ndarray:
        return np.asarray(self(np.arange(K + 1) * dt), dtype=float)

    def check(self, T: float, dt: float, K: int) -> np.ndarray:
        u = self.samples(T, dt, K)
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{self.describe()}: non-finite lead speed on [0, {T}]")
        if np.any(u < 0):
            k = int(np.argmax(u < 0))
            raise ValueError(f"{self.describe()}: lead speed {u[k]:.4g} < 0 at t={k * dt:g}")
        return u

    def describe(self) -> str:
        return self.kind


@dataclass(frozen=True)
class ConstantInput(InputProfile):
    u0: float
    kind = "constant"

    def __call__(self, t):
        return np.full(np.shape(t), float(self.u0)) if np.ndim(t) else float(self.u0)

    def describe(self) -> str:
        return f"constant:{self.u0:g}"


@dataclass(frozen=True)
class PolynomialInput(InputProfile):
    """``u(t) = c0 + c1*t + ... + cn*t^n``."""

    coefficients: tuple[float, ...]
    kind = "polynomial"

    def __post_init__(self):
        if not self.coefficients:
            raise ValueError("polynomial input needs at least one coefficient")

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coefficients)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def describe(self) -> str:
        return "poly:" + ",".join(f"{c:g}" for c in self.coefficients)


@dataclass(frozen=True)
class PiecewiseLinearInput(InputProfile):
    times: tuple[float, ...]
    values: tuple[float, ...]
    source: str = ""
    kind = "piecewise-linear"

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ValueError("piecewise-linear input needs at least two (t, u) samples")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("piecewise-linear sample times must be strictly increasing")

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def samples(self, T: float, dt: float, K: int) -> np.ndarray:
        if self.times[0] > 0 or self.times[-1] < T - 1e-9 * max(T, 1.0):
            raise ValueError(
                f"piecewise-linear samples cover [{self.times[0]:g}, {self.times[-1]:g}], need [0, {T:g}]"
            )
        return super().samples(T, dt, K)

    def describe(self) -> str:
        return f"csv:{self.source}" if self.source else f"piecewise-linear({len(self.times)} knots)"

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "PiecewiseLinearInput":
        """Two columns ``t, u``; a non-numeric first row is taken as a header."""
        times, values = [], []
        with open(path, newline="") as fh:
            for i, row in enumerate(csv.reader(fh)):
                row = [c.strip() for c in row if c.strip()]
                if not row or row[0].startswith("#"):
                    continue
                if len(row) < 2:
                    raise ValueError(f"{path}:{i + 1}: expected two columns t,u")
                try:
                    t, u = float(row[0]), float(row[1])
                except ValueError:
                    if i == 0 or not times:
                        continue
                    raise ValueError(f"{path}:{i + 1}: non-numeric row {row}") from None
                times.append(t)
                values.append(u)
        return cls(tuple(times), tuple(values), str(path))

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u"])
            w.writerows(zip(self.times, self.values))


# Stand-in for the unpublished lead-speed trace used by the direct tests:
# starts at 32.5 m/s, stays within [27, 35] m/s and reverses direction four
# times over 80 s.
LEAD_KNOTS = ((0.0, 32.5), (12.0, 35.0), (28.0, 27.0), (44.0, 34.0), (60.0, 28.0), (80.0, 33.0))


def lead_profile() -> PiecewiseLinearInput:
    t, u = zip(*LEAD_KNOTS)
    return PiecewiseLinearInput(t, u, "lead")


def parse_input(spec: str, base: str | os.PathLike | None = None) -> InputProfile:
    """``lead`` | ``constant:31`` | ``poly:30,0.1`` | ``csv:path`` | a bare CSV path."""
    spec = str(spec).strip()
    kind, _, rest = spec.partition(":")
    kind = kind.lower()
    try:
        if spec.lower() in ("lead", "shipped", "default"):
            return lead_profile()
        if kind in ("constant", "const"):
            return ConstantInput(float(rest))
        if kind in ("poly", "polynomial"):
            return PolynomialInput(tuple(float(c) for c in rest.split(",")))
    except ValueError:
        raise ValueError(f"bad input spec {spec!r}") from None
    path = rest if kind == "csv" else spec
    p = Path(path)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    if not p.exists():
        raise ValueError(f"input spec {spec!r}: expected lead, constant:U, poly:c0,c1,... or a CSV path")
    return PiecewiseLinearInput.from_csv(p)


# ---------------------------------------------------------------------------
# scenario and trajectory


@dataclass(frozen=True)
class Scenario:
    x0: State
    input: InputProfile = field(default_factory=lead_profile)
    T: float = DEFAULT_T
    dt: float = DEFAULT_DT
    output: str = GAP

    def __post_init__(self):
        if not isinstance(self.x0, State):
            object.__setattr__(self, "x0", State(*map(float, self.x0)))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        K = round(self.T / self.dt)
        if K < 1 or abs(K * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T/dt = {self.T}/{self.dt} is not a positive integer")
        if self.output not in OUTPUTS:
            raise ValueError(f"output must be one of {OUTPUTS}, got {self.output!r}")
        if not all(math.isfinite(x) for x in self.x0):
            raise ValueError(f"initial state {tuple(self.x0)} is not finite")
        object.__setattr__(self, "_u", self.input.check(self.T, self.dt, K))

    @property
    def K(self) -> int:
        return round(self.T / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    @property
    def u(self) -> np.ndarray:
        return self._u  # type: ignore[attr-defined]

    def describe(self) -> str:
        return (
            f"x0=[{self.x0.s:g}, {self.x0.v:g}] input={self.input.describe()} "
            f"T={self.T:g} dt={self.dt:g} output={self.output}"
        )


def equilibrium_scenario(
    m: ModelSpec, theta, u0: float, s0: float | None = None, T: float = DEFAULT_T, dt: float = DEFAULT_DT,
    output: str = GAP,
) -> Scenario:
    """Equilibrium start under a constant lead speed ``u0``."""
    return Scenario(equilibrium_ic(m, u0, theta, s0), ConstantInput(u0), T, dt, output)


@dataclass
class Trajectory:
    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    u: np.ndarray
    output: str = GAP

    @property
    def y(self) -> np.ndarray:
        """Outputs as ``[K+1, n_out]``."""
        return self.s[:, None] if self.output == GAP else np.column_stack([self.s, self.v])

    def to_csv(self, path: str | os.PathLike, header_extra: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_extra:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["t", "u", "s", "v"])
            for row in zip(self.t, self.u, self.s, self.v):
                w.writerow([f"{x:.10g}" for x in row])


# ---------------------------------------------------------------------------
# simulation


def _kernel(m: ModelSpec, backend=None):
    return euler_kernel(m.f_cf, m.param_names, backend)


def _check_start(m: ModelSpec, sc: Scenario, theta: np.ndarray) -> None:
    b = dict(zip(m.param_names, map(float, theta)))
    b.update(s=sc.x0.s, v=sc.x0.v)
    b[INPUT_NAME] = float(sc.u[0])
    try:
        evaluate(m.f_cf, b)
    except DomainError as err:
        raise SimulationError(
            f"{display_name(m)}: initial state s={sc.x0.s:g}, v={sc.x0.v:g} is outside the model domain ({err.reason})",
            0, "domain", tuple(sc.x0), theta,
        ) from None


def simulate_batch(m: ModelSpec, sc: Scenario, thetas: np.ndarray, backend=None):
    """Raw batched run: ``(s[B, K+1], v[B, K+1], status[B])``.

    ``status`` is 0 for a clean run, else ``k+1`` for the first failed step.
    No bounds or domain checks; the optimizer relies on this being cheap.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    return _kernel(m, backend)(thetas, sc.x0.s, sc.x0.v, sc.u, sc.dt)


def batch_outputs(sc: Scenario, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``[B, K+1, n_out]`` output array from a batched run."""
    return s[:, :, None] if sc.output == GAP else np.stack([s, v], axis=2)


def _diagnose(m: ModelSpec, sc: Scenario, theta: np.ndarray, s: np.ndarray, v: np.ndarray, k: int):
    """``k`` is the failed update index (state at k finite, k+1 not)."""
    b = dict(zip(m.param_names, map(float, theta)))
    b.update(s=float(s[k]), v=float(v[k]))
    b[INPUT_NAME] = float(sc.u[k])
    where = f"step {k} (t={k * sc.dt:g} s, s={s[k]:.6g}, v={v[k]:.6g})"
    try:
        evaluate(m.f_cf, b)
    except DomainError as err:
        return SimulationError(f"{display_name(m)}: left the model domain at {where}: {err.reason}", k, "domain",
                               (s[k], v[k]), theta)
    return SimulationError(f"{display_name(m)}: state blew up at {where}", k, "blow-up", (s[k], v[k]), theta)


def simulate(m: ModelSpec, sc: Scenario, theta, backend=None, check_bounds: bool = True) -> Trajectory:
    theta = m.check_bounds(theta) if check_bounds else m.theta_array(theta)
    _check_start(m, sc, theta)
    s, v, status = simulate_batch(m, sc, theta[None, :], backend)
    if status[0]:
        raise _diagnose(m, sc, theta, s[0], v[0], int(status[0]) - 1)
    return Trajectory(sc.times, s[0], v[0], sc.u.copy(), sc.output)


def mse(y1: np.ndarray, y2: np.ndarray) -> float:
    """Mean over samples of the squared output-difference norm."""
    d = np.asarray(y1) - np.asarray(y2)
    if d.ndim == 1:
        d = d[:, None]
    return float(np.mean(np.sum(d * d, axis=1)))


def output_error(m: ModelSpec, sc: Scenario, theta1, theta2, backend=None) -> float:
    """Mean squared output difference over the K+1 samples (m^2 for gap-only)."""
    a = simulate(m, sc, theta1, backend)
    b = simulate(m, sc, theta2, backend)
    return mse(a.y, b.y)


# ---------------------------------------------------------------------------
# error surfaces


@dataclass
class ErrorGrid:
    x_name: str
    y_name: str
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # [len(y), len(x)], NaN where the simulation failed
    theta_true: np.ndarray

    def to_csv(self, path: str | os.PathLike, header_extra: Sequence[str] = ()) -> None:
        """One row per y value; first column holds y, the header holds x."""
        with open(path, "w", newline="") as fh:
            for line in header_extra:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow([f"{self.y_name}\\{self.x_name}"] + [f"{x:.10g}" for x in self.x])
            for yv, row in zip(self.y, self.values):
                w.writerow([f"{yv:.10g}"] + ["" if not np.isfinite(e) else f"{e:.10g}" for e in row])


def _axis(m: ModelSpec, a) -> int:
    if isinstance(a, str):
        try:
            return m.param_names.index(a)
        except ValueError:
            raise ValueError(f"{display_name(m)} has no parameter {a!r}") from None
    return int(a)


def error_grid(
    m: ModelSpec,
    sc: Scenario,
    theta_true,
    axes: tuple,
    ranges: tuple | None = None,
    resolution: int | tuple[int, int] = 41,
    backend=None,
) -> ErrorGrid:
    """``e(theta, theta_true)`` over a 2-D slice, other parameters pinned.

    ``ranges`` defaults to the parameter bounds of the two axes.  The true
    values are always added to the axes so the surface has a node at
    ``theta_true``.
    """
    theta_true = m.check_bounds(theta_true)
    i, j = (_axis(m, a) for a in axes)
    if i == j:
        raise ValueError("grid axes must be two different parameters")
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    if ranges is None:
        ranges = ((m.lower[i], m.upper[i]), (m.lower[j], m.upper[j]))
    xs = np.union1d(np.linspace(*ranges[0], int(nx)), [theta_true[i]])
    ys = np.union1d(np.linspace(*ranges[1], int(ny)), [theta_true[j]])
    X, Y = np.meshgrid(xs, ys)
    thetas = np.tile(theta_true, (X.size, 1))
    thetas[:, i] = X.ravel()
    thetas[:, j] = Y.ravel()
    ref = simulate(m, sc, theta_true, backend)
    s, v, status = simulate_batch(m, sc, thetas, backend)
    Yb = batch_outputs(sc, s, v)
    d = Yb - ref.y[None]
    e = np.mean(np.sum(d * d, axis=2), axis=1)
    e[status != 0] = np.nan
    names = m.param_names
    return ErrorGrid(names[i], names[j], xs, ys, e.reshape(X.shape), theta_true)


__all__ = [
    "ConstantInput",
    "ErrorGrid",
    "GAP",
    "GAP_AND_SPEED",
    "InputProfile",
    "LEAD_KNOTS",
    "PiecewiseLinearInput",
    "PolynomialInput",
    "Scenario",
    "SimulationError",
    "Trajectory",
    "batch_outputs",
    "equilibrium_scenario",
    "error_grid",
    "lead_profile",
    "mse",
    "output_error",
    "parse_input",
    "simulate",
    "simulate_batch",
]
