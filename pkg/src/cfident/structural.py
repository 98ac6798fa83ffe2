"""Structural local identifiability through extended Lie derivatives.

Parameters are appended to the state with zero dynamics.  The rows of the
observability-identifiability matrix are the gradients, with respect to the
augmented state, of successive extended Lie derivatives of each output.
Full column rank at a generic point means every state and parameter is
locally identifiable there.

Rank is decided numerically: the symbolic matrix is evaluated at random
points and the largest rank seen is taken as the generic rank.  A point that
happens to land on a measure-zero degenerate set can only lower the rank, so
the maximum over a handful of trials is a reliable surrogate, but verdicts
are labelled "generic" since no exception set is certified.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import (
    DomainError,
    Expr,
    ExpressionTooLarge,
    SymbolTable,
    Tape,
    ZERO,
    add,
    dag_size,
    differentiate,
    evaluate,
    input_name,
    mul,
    parse,
    sub,
    sym,
)
from .models import INPUT_NAME, STATE_NAMES, ModelSpec, display_name

GAP = "gap"
GAP_AND_SPEED = "gap-and-speed"
OUTPUTS = (GAP, GAP_AND_SPEED)

DEFAULT_NODE_CAP = 1_000_000
DEFAULT_TOL = 1e-9
DEFAULT_TRIALS = 20
DEFAULT_MAX_EXTRA = 3

# Sampling boxes for symbols that have no parameter bounds.
STATE_RANGES = {"s": (5.0, 120.0), "v": (1.0, 40.0)}
INPUT_RANGE = (1.0, 40.0)
INPUT_DERIVATIVE_RANGE = (-3.0, 3.0)


@dataclass(frozen=True)
class AugmentedSystem:
    model: ModelSpec
    table: SymbolTable
    f: tuple[Expr, ...]
    g: tuple[Expr, ...]
    output: str

    @property
    def n_aug(self) -> int:
        return len(self.f)

    @property
    def augmented(self) -> list[str]:
        return self.table.augmented

    @property
    def inputs(self) -> list[str]:
        return self.table.inputs

    @property
    def J(self) -> int:
        return self.table.input_order


def augment(m: ModelSpec, output: str = GAP, J: int | None = None) -> AugmentedSystem:
    if output not in OUTPUTS:
        raise ValueError(f"output must be one of {OUTPUTS}, got {output!r}")
    n_aug = len(STATE_NAMES) + m.n_params
    if J is None:
        J = n_aug - 1
    if J < n_aug - 1:
        raise ValueError(f"need at least {n_aug - 1} input derivatives for {n_aug} augmented states, got J={J}")
    table = SymbolTable.build(STATE_NAMES, m.param_names, input_order=J)
    s, v, u = sym("s"), sym("v"), sym(INPUT_NAME)
    f = (sub(u, v), m.f_cf) + (ZERO,) * m.n_params
    g = (s,) if output == GAP else (s, v)
    return AugmentedSystem(m, table, f, g, output)


def lie_step(sys: AugmentedSystem, h: Expr, memo: dict | None = None) -> Expr:
    """One extended Lie derivative: dh/dx~ . f + sum_j dh/du^(j) u^(j+1)."""
    if memo is None:
        memo = {}
    terms = []
    for name, fk in zip(sys.augmented, sys.f):
        if fk is ZERO:
            continue
        d = differentiate(h, name, memo)
        if d is not ZERO:
            terms.append(mul(d, fk))
    inputs = sys.inputs
    for j, name in enumerate(inputs):
        d = differentiate(h, name, memo)
        if d is ZERO:
            continue
        if j + 1 >= len(inputs):
            raise ValueError(f"Lie derivative needs {input_name(j + 1)}, beyond the housed order J={sys.J}")
        terms.append(mul(d, sym(inputs[j + 1])))
    return add(*terms)


def extended_lie(
    sys: AugmentedSystem, h: Expr, order: int, memo: dict | None = None, node_cap: int = DEFAULT_NODE_CAP
) -> Expr:
    if order > sys.J + 1:
        raise ValueError(f"order {order} exceeds the housed input derivatives (J={sys.J})")
    return lie_series(sys, h, order, memo, node_cap)[-1]


def lie_series(
    sys: AugmentedSystem, h: Expr, order: int, memo: dict | None = None, node_cap: int = DEFAULT_NODE_CAP
) -> list[Expr]:
    """``[h, L h, ..., L^order h]``."""
    if memo is None:
        memo = {}
    out = [h]
    for i in range(order):
        nxt = lie_step(sys, out[-1], memo)
        size = dag_size(nxt)
        if size > node_cap:
            raise ExpressionTooLarge(size, node_cap, f"Lie derivative of order {i + 1}")
        out.append(nxt)
    return out


@dataclass
class OIMatrix:
    sys: AugmentedSystem
    rows: list[list[Expr]]
    lie: list[list[Expr]]  # lie[k][i] = L^i g_k
    extra: int = 0  # Lie orders beyond n_aug-1
    _tape: Tape | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), self.sys.n_aug

    @property
    def columns(self) -> list[str]:
        return self.sys.augmented

    @property
    def variables(self) -> list[str]:
        return self.sys.augmented + self.sys.inputs

    @property
    def tape(self) -> Tape:
        if self._tape is None:
            self._tape = Tape([e for row in self.rows for e in row], self.variables)
        return self._tape

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        """``points[B, len(variables)]`` -> ``[B, rows, cols]``; NaN marks a domain violation."""
        flat = self.tape.evaluate(points)
        return flat.reshape(len(points), *self.shape)

    def evaluate(self, point: Mapping[str, float]) -> np.ndarray:
        """Numeric matrix at one point; unbound input derivatives default to 0."""
        binding = {n: 0.0 for n in self.sys.inputs}
        binding.update({k: float(v) for k, v in point.items()})
        row = self.tape.point(binding)
        M = self.evaluate_batch(row[None, :])[0]
        if not np.all(np.isfinite(M)):
            err = self.tape.diagnose(row)
            raise err or DomainError("non-finite matrix entry", binding=binding)
        return M

    def size(self) -> int:
        return dag_size(*[e for row in self.rows for e in row])


def build_oi(
    sys: AugmentedSystem, node_cap: int = DEFAULT_NODE_CAP, memo: dict | None = None, extra: int = 0
) -> OIMatrix:
    """Stack d(L^i g)/dx~ for i = 0 .. n_aug-1+extra, output by output."""
    if memo is None:
        memo = {}
    order = sys.n_aug - 1 + extra
    if order > sys.J + 1:
        raise ValueError(f"{order} Lie derivatives need J >= {order - 1}, system has J={sys.J}")
    rows, lie = [], []
    for g in sys.g:
        series = lie_series(sys, g, order, memo, node_cap)
        lie.append(series)
        for h in series:
            rows.append([differentiate(h, x, memo) for x in sys.augmented])
    M = OIMatrix(sys, rows, lie, extra)
    size = M.size()
    if size > node_cap:
        raise ExpressionTooLarge(size, node_cap, "observability-identifiability matrix")
    return M


_CACHE: dict = {}
_MEMO: dict = {}


def oi_matrix(m: ModelSpec, output: str = GAP, node_cap: int = DEFAULT_NODE_CAP, extra: int = 0) -> OIMatrix:
    """Memoized :func:`build_oi` for a model, optionally with ``extra``
    Lie orders beyond the minimum."""
    key = (m.name, m.f_cf.digest, output, extra)
    M = _CACHE.get(key)
    if M is None:
        n_aug = len(STATE_NAMES) + m.n_params
        sys = augment(m, output, J=n_aug - 1 + extra)
        memo = _MEMO.setdefault(m.f_cf.digest, {})
        M = _CACHE[key] = build_oi(sys, node_cap, memo, extra)
    return M


# ---------------------------------------------------------------------------
# numeric rank


def matrix_rank(A: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    """Number of singular values above ``tol`` times the largest."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def numeric_rank(M: OIMatrix, point: Mapping[str, float], tol: float = DEFAULT_TOL) -> int:
    return matrix_rank(M.evaluate(point), tol)


# ---------------------------------------------------------------------------
# evaluation modes


@dataclass(frozen=True)
class Mode:
    """How the evaluation point is chosen.

    ``fixed`` pins symbols to numbers; ``ties`` sets symbols from expressions
    of already-sampled ones, applied in order after sampling.
    """

    name: str
    fixed: tuple[tuple[str, float], ...] = ()
    ties: tuple[tuple[str, Expr], ...] = ()

    def describe(self) -> str:
        parts = [self.name]
        if self.fixed:
            parts.append(",".join(f"{k}={v:g}" for k, v in self.fixed))
        if self.ties:
            from .expr import to_string

            parts.append(",".join(f"{k}={to_string(e)}" for k, e in self.ties))
        return " ".join(parts)


def generic_mode() -> Mode:
    return Mode("generic-IC")


def equilibrium_mode(m: ModelSpec) -> Mode:
    ties = [("v", sym(INPUT_NAME))]
    if m.equilibrium_gap is not None:
        ties.append(("s", m.equilibrium_gap))
    return Mode("equilibrium-IC", ties=tuple(ties))


def fixed_ic_mode(s0: float, v0: float) -> Mode:
    return Mode("fixed-IC", fixed=(("s", float(s0)), ("v", float(v0))))


def fixed_point_mode(m: ModelSpec, s0: float, v0: float, theta, u0: float | None = None) -> Mode:
    fixed = [("s", float(s0)), ("v", float(v0))] + list(m.theta_dict(theta).items())
    if u0 is not None:
        fixed.append((INPUT_NAME, float(u0)))
    return Mode("fixed-point", fixed=tuple(fixed))


def relation_mode(ties: Mapping[str, str | Expr], name: str = "relation") -> Mode:
    """Generic sampling followed by user relations, e.g. ``{"tau": "s/v"}``."""
    out = []
    for k, e in ties.items():
        out.append((k, parse(e) if isinstance(e, str) else e))
    return Mode(name, ties=tuple(out))


@dataclass
class RankReport:
    model: str
    output: str
    mode: str
    degree: int
    n_aug: int
    generic_rank: int
    full: bool
    unidentifiable: list[str]
    trials: int
    failed: int
    tol: float
    seed: int
    ranks: list[int] = field(default_factory=list)
    rows: int = 0

    @property
    def verdict(self) -> str:
        return "generically full rank" if self.full else "rank deficient"

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "output": self.output,
            "mode": self.mode,
            "degree": self.degree,
            "n_aug": self.n_aug,
            "rank": self.generic_rank,
            "full": self.full,
            "verdict": self.verdict,
            "unidentifiable": ",".join(self.unidentifiable),
            "trials": self.trials,
            "failed_trials": self.failed,
            "tol": self.tol,
            "seed": self.seed,
            "rows": self.rows,
        }


def _sample_bindings(m: ModelSpec, mode: Mode, degree: int, n: int, n_inputs: int, rng: np.random.Generator):
    """Draw up to ``n`` valid bindings (attempting at most 50*n)."""
    fixed = dict(mode.fixed)
    out, failed = [], 0
    for _ in range(50 * n):
        if len(out) == n:
            break
        b: dict[str, float] = {}
        for p in m.params:
            b[p.name] = rng.uniform(p.lower, p.upper)
        for name, (lo, hi) in STATE_RANGES.items():
            b[name] = rng.uniform(lo, hi)
        for j in range(n_inputs):
            if j == 0:
                b[input_name(j)] = rng.uniform(*INPUT_RANGE)
            elif j <= degree:
                b[input_name(j)] = rng.uniform(*INPUT_DERIVATIVE_RANGE)
            else:
                b[input_name(j)] = 0.0
        b.update(fixed)
        try:
            for name, e in mode.ties:
                b[name] = evaluate(e, b)
        except DomainError:
            failed += 1
            continue
        out.append(b)
    return out, failed


def _matrices(M: OIMatrix, bindings: list[dict]) -> np.ndarray:
    variables = M.variables
    pts = np.array([[b.get(v, 0.0) for v in variables] for b in bindings], dtype=float)
    return M.evaluate_batch(pts.reshape(-1, len(variables)))


def generic_rank(
    M: OIMatrix,
    mode: Mode | None = None,
    input_degree: int = 0,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_extra: int = DEFAULT_MAX_EXTRA,
) -> RankReport:
    """Generic numeric rank of ``M`` with inputs of polynomial degree ``input_degree``.

    Input derivatives above ``input_degree`` are zero; everything not pinned
    by ``mode`` is sampled (parameters from their bounds, states and inputs
    from ``STATE_RANGES``/``INPUT_RANGE``/``INPUT_DERIVATIVE_RANGE``).

    When the rank is deficient, rows from further Lie orders (up to
    ``max_extra`` per output) are appended one at a time, cycling over the
    outputs, for as long as each one raises the rank.  Unidentifiable
    augmented states are those whose column can be dropped without lowering
    the final rank.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    top = M.sys.J + max_extra * len(M.sys.g)
    if input_degree > top:
        raise ValueError(f"input degree {input_degree} exceeds the highest input derivative in play ({top})")
    mode = mode or generic_mode()
    m = M.sys.model
    rng = np.random.default_rng(seed)
    n_inputs = top + 1
    bindings, failed = _sample_bindings(m, mode, input_degree, trials, n_inputs, rng)
    if not bindings:
        raise DomainError(f"all {trials} rank trials hit domain violations for {display_name(m)} ({mode.describe()})")
    mats = _matrices(M, bindings)
    ok = np.all(np.isfinite(mats), axis=(1, 2))
    failed += int(np.sum(~ok))
    bindings = [b for b, k in zip(bindings, ok) if k]
    mats = mats[ok]
    if len(mats) == 0:
        raise DomainError(f"all {trials} rank trials hit domain violations for {display_name(m)} ({mode.describe()})")
    n = M.shape[1]
    ranks = [matrix_rank(A, tol) for A in mats]
    r = max(ranks)
    n_rows = M.shape[0]
    n_out = len(M.sys.g)
    base_order = M.sys.n_aug + M.extra  # Lie orders per output in M
    for step in range(1, max_extra * n_out + 1):
        if r == n:
            break
        depth = -(-step // n_out)
        deeper = oi_matrix(m, M.sys.output, extra=M.extra + depth)
        per_out = base_order + depth
        keep = [q * per_out + o for q in range(n_out) for o in range(base_order)]
        keep += [q * per_out + base_order + k // n_out for k in range(step) for q in [k % n_out]]
        cand = _matrices(deeper, bindings)[:, sorted(keep), :]
        if not np.all(np.isfinite(cand)):
            break
        cand_ranks = [matrix_rank(A, tol) for A in cand]
        if max(cand_ranks) <= r:
            break
        mats, ranks, r, n_rows = cand, cand_ranks, max(cand_ranks), len(keep)
    unident: list[str] = []
    if r < n:
        for i, name in enumerate(M.columns):
            ri = max(matrix_rank(np.delete(A, i, axis=1), tol) for A in mats)
            if ri == r:
                unident.append(name)
    return RankReport(
        model=display_name(m),
        output=M.sys.output,
        mode=mode.describe(),
        degree=input_degree,
        n_aug=n,
        generic_rank=r,
        full=r == n,
        unidentifiable=unident,
        trials=len(mats),
        failed=failed,
        tol=tol,
        seed=seed,
        ranks=ranks,
        rows=n_rows,
    )


def min_admissible_degree(
    M: OIMatrix,
    mode: Mode | None = None,
    max_n: int | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_extra: int = DEFAULT_MAX_EXTRA,
) -> int | None:
    """Smallest polynomial input degree giving full generic rank, or ``None``."""
    J = M.sys.J
    if max_n is None:
        max_n = J - 1
    if max_n > J - 1:
        raise ValueError(f"max_n={max_n} exceeds J-1={J - 1}")
    for n in range(max_n + 1):
        if generic_rank(M, mode, n, trials, seed, tol, max_extra).full:
            return n
    return None


@dataclass
class Table1Row:
    model: str
    parameters: list[str]
    generic: int | None
    equilibrium: int | None
    reports: list[RankReport]


def table1(
    models: Sequence[ModelSpec],
    output: str = GAP,
    max_degree: int = 3,
    trials: int = DEFAULT_TRIALS,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_extra: int = DEFAULT_MAX_EXTRA,
) -> list[Table1Row]:
    """Minimum admissible input degree per model for generic and equilibrium
    initial conditions."""
    out = []
    for m in models:
        M = oi_matrix(m, output)
        top = max_degree
        row_reports = []
        found: dict[str, int | None] = {}
        for label, mode in (("generic", generic_mode()), ("equilibrium", equilibrium_mode(m))):
            found[label] = None
            for n in range(top + 1):
                rep = generic_rank(M, mode, n, trials, seed, tol, max_extra)
                row_reports.append(rep)
                if rep.full:
                    found[label] = n
                    break
        out.append(Table1Row(display_name(m), m.param_names, found["generic"], found["equilibrium"], row_reports))
    return out


def format_degree(n: int | None) -> str:
    return "N/A" if n is None else f"n>={n}"


def render_table1(rows: Sequence[Table1Row]) -> str:
    head = ("Model", "Parameters", "Generic x0", "Equilibrium x0*")
    body = [(r.model, ", ".join(r.parameters), format_degree(r.generic), format_degree(r.equilibrium)) for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*b) for b in body]
    return "\n".join(lines)


__all__ = [
    "AugmentedSystem",
    "GAP",
    "GAP_AND_SPEED",
    "Mode",
    "OIMatrix",
    "RankReport",
    "Table1Row",
    "augment",
    "build_oi",
    "equilibrium_mode",
    "extended_lie",
    "fixed_ic_mode",
    "fixed_point_mode",
    "generic_mode",
    "generic_rank",
    "lie_series",
    "lie_step",
    "matrix_rank",
    "min_admissible_degree",
    "numeric_rank",
    "oi_matrix",
    "relation_mode",
    "render_table1",
    "table1",
]
