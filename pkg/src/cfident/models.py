"""The four car-following laws as symbolic systems.

Every model drives the same two-state plant

    ds/dt = u - v
    dv/dt = f_CF(s, v, u; theta)

where ``s`` is the space gap (m), ``v`` the follower speed (m/s) and ``u``
the lead-vehicle speed (m/s).  A :class:`ModelSpec` carries ``f_CF`` as an
expression, box bounds for each parameter and, where one exists in closed
form, the equilibrium space gap for a given lead speed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import DomainError, Expr, SymbolTable, evaluate, free_symbols, parse

STATE_NAMES = ("s", "v")
INPUT_NAME = "u"


@dataclass(frozen=True)
class Param:
    name: str
    lower: float
    upper: float
    unit: str = ""
    doc: str = ""

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"parameter {self.name}: lower bound {self.lower} must be below upper {self.upper}")


@dataclass(frozen=True)
class State:
    s: float
    v: float

    def __iter__(self):
        yield self.s
        yield self.v


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: tuple[Param, ...]
    f_cf: Expr
    equilibrium_gap: Expr | None = None
    title: str = ""
    table: SymbolTable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = SymbolTable.build(STATE_NAMES, [p.name for p in self.params], input_order=0)
        object.__setattr__(self, "table", table)
        allowed = set(STATE_NAMES) | {INPUT_NAME} | set(self.param_names)
        extra = free_symbols(self.f_cf) - allowed
        if extra:
            raise ValueError(f"model {self.name}: dynamics reference unknown symbols {sorted(extra)}")
        if self.equilibrium_gap is not None:
            extra = free_symbols(self.equilibrium_gap) - ({INPUT_NAME} | set(self.param_names))
            if extra:
                raise ValueError(
                    f"model {self.name}: equilibrium gap may only use u and parameters, found {sorted(extra)}"
                )

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params])

    def theta_dict(self, theta: Sequence[float] | Mapping[str, float]) -> dict[str, float]:
        if isinstance(theta, Mapping):
            missing = set(self.param_names) - set(theta)
            if missing:
                raise ValueError(f"model {self.name}: missing parameters {sorted(missing)}")
            return {n: float(theta[n]) for n in self.param_names}
        theta = list(theta)
        if len(theta) != self.n_params:
            raise ValueError(f"model {self.name} expects {self.n_params} parameters, got {len(theta)}")
        return dict(zip(self.param_names, map(float, theta)))

    def theta_array(self, theta) -> np.ndarray:
        return np.array(list(self.theta_dict(theta).values()))

    def in_bounds(self, theta, slack: float = 0.0) -> bool:
        t = self.theta_array(theta)
        return bool(np.all(t >= self.lower - slack) and np.all(t <= self.upper + slack))

    def check_bounds(self, theta) -> np.ndarray:
        t = self.theta_array(theta)
        for p, x in zip(self.params, t):
            if not p.lower <= x <= p.upper:
                raise ValueError(f"{self.name}: {p.name}={x} outside [{p.lower}, {p.upper}]")
        return t

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        """Build a custom model from the config-file schema::

            name: mymodel
            params:
              - {name: k, lower: 0.1, upper: 2}
            dynamics: "k*(u - v)"
            equilibrium_gap: null      # or an expression in u and parameters
        """
        try:
            name = str(d["name"])
            params = tuple(
                Param(str(p["name"]), float(p["lower"]), float(p["upper"]), str(p.get("unit", "")))
                for p in d["params"]
            )
            dynamics = d["dynamics"]
        except KeyError as err:
            raise ValueError(f"custom model is missing field {err.args[0]!r}") from None
        names = [p.name for p in params]
        reserved = set(STATE_NAMES) | {INPUT_NAME}
        clash = reserved & set(names)
        if clash:
            raise ValueError(f"parameter names {sorted(clash)} are reserved for states/input")
        f = parse(str(dynamics), list(STATE_NAMES) + [INPUT_NAME] + names)
        gap_text = d.get("equilibrium_gap")
        gap = parse(str(gap_text), [INPUT_NAME] + names) if gap_text not in (None, "") else None
        return cls(name, params, f, gap, str(d.get("title", name)))

    def to_dict(self) -> dict:
        from .expr import to_string

        return {
            "name": self.name,
            "params": [{"name": p.name, "lower": p.lower, "upper": p.upper} for p in self.params],
            "dynamics": to_string(self.f_cf),
            "equilibrium_gap": None if self.equilibrium_gap is None else to_string(self.equilibrium_gap),
        }


def _model(name, title, params, dynamics, gap) -> ModelSpec:
    names = [p.name for p in params]
    f = parse(dynamics, list(STATE_NAMES) + [INPUT_NAME] + names)
    g = parse(gap, [INPUT_NAME] + names) if gap is not None else None
    return ModelSpec(name, tuple(params), f, g, title)


CTHRV = _model(
    "cthrv",
    "constant time-headway relative-velocity",
    [
        Param("k1", 0.001, 1.0, "1/s^2", "gain on the headway error"),
        Param("k2", 0.01, 1.0, "1/s", "gain on the relative speed"),
        Param("tau", 0.1, 3.0, "s", "constant time headway"),
    ],
    "k1*(s - tau*v) + k2*(u - v)",
    "tau*u",
)

OV = _model(
    "ov",
    "optimal velocity",
    [
        Param("alpha", 0.5, 3.3, "1/s", "relaxation rate toward the optimal speed"),
        Param("a", 10.0, 32.0, "m/s", "optimal-velocity amplitude"),
        Param("hm", 2.0, 30.0, "m", "optimal-velocity inflection gap"),
        Param("b", 18.0, 45.0, "m", "optimal-velocity width"),
    ],
    "alpha*(a*(tanh((s - hm)/b) + tanh(hm/b)) - v)",
    "hm - b*atanh(tanh(hm/b) - u/a)",
)

# C carries units m^gamma/s so that C*(u - v)/s^gamma is an acceleration; no
# physical meaning is attached to it beyond that.
FTL = _model(
    "ftl",
    "follow-the-leader",
    [
        Param("C", 100.0, 600.0, "m^gamma/s", "sensitivity to the relative speed"),
        Param("gamma", 1.0, 3.0, "", "gap exponent"),
    ],
    "C*(u - v)/s^gamma",
    None,
)

IDM = _model(
    "idm",
    "intelligent driver model",
    [
        Param("sj", 3.0, 25.0, "m", "jam distance"),
        Param("vf", 21.0, 41.0, "m/s", "free-flow speed"),
        Param("T", 0.1, 3.0, "s", "desired time gap"),
        Param("a", 0.1, 3.0, "m/s^2", "maximum acceleration"),
        Param("b", 0.5, 5.0, "m/s^2", "comfortable deceleration"),
    ],
    "a*(1 - (v/vf)^4 - ((sj + v*T + v*(v - u)/(2*sqrt(a*b)))/s)^2)",
    "(sj + u*T)/sqrt(1 - (u/vf)^4)",
)

BUILTINS: dict[str, ModelSpec] = {m.name: m for m in (CTHRV, OV, FTL, IDM)}
DISPLAY_NAMES = {"cthrv": "CTH-RV", "ov": "OV", "ftl": "FTL", "idm": "IDM"}


def _key(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


def builtin_model(name: str) -> ModelSpec:
    try:
        return BUILTINS[_key(name)]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose one of {', '.join(DISPLAY_NAMES.values())}") from None


def display_name(m: ModelSpec) -> str:
    return DISPLAY_NAMES.get(m.name, m.name)


def equilibrium_gap(m: ModelSpec, u0: float, theta) -> float | None:
    """Closed-form equilibrium gap, or ``None`` when every gap is an
    equilibrium (FTL)."""
    if m.equilibrium_gap is None:
        return None
    binding = m.theta_dict(theta)
    binding[INPUT_NAME] = float(u0)
    return evaluate(m.equilibrium_gap, binding)


def equilibrium_ic(m: ModelSpec, u0: float, theta, s0: float | None = None, tol: float = 1e-9) -> State:
    """Initial state with ``v0 = u0`` and zero acceleration.

    Models without a closed-form gap (FTL) are at rest for any gap, so the
    caller supplies ``s0``.
    """
    u0 = float(u0)
    if u0 < 0:
        raise DomainError("lead speed must be non-negative", operand=u0)
    gap = equilibrium_gap(m, u0, theta)
    if gap is None:
        if s0 is None:
            raise ValueError(f"{display_name(m)} is at equilibrium for any gap; pass s0 explicitly")
        gap = float(s0)
    if gap < 0:
        raise DomainError(f"{display_name(m)} has no non-negative equilibrium gap", operand=gap)
    x = State(gap, u0)
    try:
        acc = acceleration(m, x, u0, theta)
    except DomainError:
        if gap == 0.0:
            return x  # standstill at zero gap, allowed for laws defined there
        raise
    scale = 1.0 + abs(gap) + abs(u0)
    if abs(acc) > tol * scale:
        raise ValueError(f"{display_name(m)}: equilibrium gap {gap} leaves acceleration {acc}")
    return x


def acceleration(m: ModelSpec, x: State | Iterable[float], u: float, theta) -> float:
    s, v = x
    binding = m.theta_dict(theta)
    binding.update(s=float(s), v=float(v), u=float(u))
    return evaluate(m.f_cf, binding)
