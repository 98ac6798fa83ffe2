from __future__ import annotations

import math
from typing import Mapping, Union

from .errors import DomainError, UnboundSymbolError
from .nodes import (
    MINUS_ONE,
    ONE,
    ZERO,
    Expr,
    add,
    as_expr,
    const,
    div,
    func,
    ln,
    mul,
    postorder,
    power,
    rebuild,
    sub,
    sym,
)

SymbolLike = Union[Expr, str]

_HALF = const(0.5)
_TWO = const(2.0)


def _as_symbol(s: SymbolLike) -> Expr:
    if isinstance(s, str):
        return sym(s)
    if s.op != "sym":
        raise TypeError(f"expected a symbol, got {s}")
    return s


def _d_node(node: Expr, d: list[Expr], wrt: Expr) -> Expr:
    op = node.op
    if op == "add":
        return add(*d)
    if op == "mul":
        terms = []
        args = node.args
        for i, di in enumerate(d):
            if di is ZERO:
                continue
            terms.append(mul(di, *args[:i], *args[i + 1 :]))
        return add(*terms) if terms else ZERO
    if op == "pow":
        b, x = node.args
        db, dx = d
        if x.op == "const":
            # d(b^c) = c*b^(c-1)*b'
            return mul(x, power(b, const(x.value - 1.0)), db)  # type: ignore[operator]
        # d(b^x) = b^x * (x'*ln(b) + x*b'/b)
        inner = add(mul(dx, ln(b)), mul(x, db, power(b, MINUS_ONE)))
        return mul(node, inner)
    (da,) = d
    (a,) = node.args
    if op == "tanh":
        return mul(sub(ONE, power(node, _TWO)), da)
    if op == "atanh":
        return div(da, sub(ONE, power(a, _TWO)))
    if op == "ln":
        return div(da, a)
    if op == "exp":
        return mul(node, da)
    if op == "sqrt":
        return div(da, mul(_TWO, node))
    raise ValueError(f"cannot differentiate node of kind {op!r}")


def differentiate(e: Expr, wrt: SymbolLike, memo: dict | None = None) -> Expr:
    """Partial derivative of ``e`` with respect to the symbol ``wrt``.

    ``memo`` may be shared across calls (keyed on ``(node, wrt)``) so that
    repeated differentiation of overlapping DAGs reuses earlier work.
    """
    w = _as_symbol(wrt)
    bit = w.mask
    if memo is None:
        memo = {}
    if not e.mask & bit:
        return ZERO
    for node in postorder([e]):
        key = (node, w)
        if key in memo:
            continue
        if not node.mask & bit:
            memo[key] = ZERO
        elif node.op == "sym":
            memo[key] = ONE  # the only symbol carrying this bit is w itself
        else:
            memo[key] = _d_node(node, [memo[(a, w)] if a.mask & bit else ZERO for a in node.args], w)
    return memo[(e, w)]


def gradient(e: Expr, wrt, memo: dict | None = None) -> list[Expr]:
    if memo is None:
        memo = {}
    return [differentiate(e, w, memo) for w in wrt]


def substitute(e: Expr, bindings: Mapping) -> Expr:
    """Simultaneously replace symbols by expressions (or numbers)."""
    repl: dict[Expr, Expr] = {}
    for k, v in bindings.items():
        repl[_as_symbol(k)] = as_expr(v)
    if not repl:
        return e
    bits = 0
    for k in repl:
        bits |= k.mask
    if not e.mask & bits:
        return e
    out: dict[Expr, Expr] = {}
    for node in postorder([e]):
        if not node.mask & bits:
            out[node] = node
        elif node.op == "sym":
            out[node] = repl.get(node, node)
        else:
            out[node] = rebuild(node.op, tuple(out[a] for a in node.args), node.value)
    return out[e]


def simplify(e: Expr) -> Expr:
    """Re-run the canonicalizing constructors over every node of ``e``.

    Constructors already fold constants, drop 0/1 identities, flatten sums
    and products and collect like terms, so this is idempotent; it mostly
    matters for expressions assembled from pieces built elsewhere.
    """
    out: dict[Expr, Expr] = {}
    for node in postorder([e]):
        out[node] = rebuild(node.op, tuple(out[a] for a in node.args), node.value)
    return out[e]


# ---------------------------------------------------------------------------
# scalar evaluation with domain checks


def _binding(point: Mapping) -> dict[str, float]:
    out = {}
    for k, v in point.items():
        name = k if isinstance(k, str) else _as_symbol(k).value
        out[name] = float(v)
    return out


def evaluate(e: Expr, point: Mapping) -> float:
    """Evaluate ``e`` in IEEE doubles, raising :class:`DomainError` on any
    operation outside its real domain."""
    env = _binding(point)
    val: dict[Expr, float] = {}
    for node in postorder([e]):
        op = node.op
        if op == "const":
            val[node] = node.value  # type: ignore[assignment]
            continue
        if op == "sym":
            try:
                val[node] = env[node.value]  # type: ignore[index]
            except KeyError:
                raise UnboundSymbolError(node.value) from None  # type: ignore[arg-type]
            continue
        xs = [val[a] for a in node.args]
        try:
            r = _apply(node, xs)
        except DomainError as err:
            raise DomainError(err.reason, err.node, err.operand, env) from None
        except (OverflowError, ZeroDivisionError):
            raise DomainError("overflow", node, xs[0], env) from None
        if isinstance(r, complex) or not math.isfinite(r):
            if all(math.isfinite(x) for x in xs):
                raise DomainError("non-finite result", node, xs[0], env)
            r = float(r.real) if isinstance(r, complex) else r
        val[node] = r
    return val[e]


def _apply(node: Expr, xs: list[float]) -> float:
    op = node.op
    if op == "add":
        acc = xs[0]
        for x in xs[1:]:
            acc += x
        return acc
    if op == "mul":
        acc = xs[0]
        for x in xs[1:]:
            acc *= x
        return acc
    if op == "pow":
        b, x = xs
        if b == 0.0 and x <= 0.0:
            raise DomainError("zero raised to a non-positive power", node, b)
        if b < 0.0 and x != math.floor(x):
            raise DomainError("negative base raised to a non-integer power", node, b)
        return b**x
    (x,) = xs
    if op == "tanh":
        return math.tanh(x)
    if op == "atanh":
        if not -1.0 < x < 1.0:
            raise DomainError("atanh argument outside (-1, 1)", node, x)
        return math.atanh(x)
    if op == "ln":
        if not x > 0.0:
            raise DomainError("ln of a non-positive number", node, x)
        return math.log(x)
    if op == "exp":
        return math.exp(x)
    if op == "sqrt":
        if x < 0.0:
            raise DomainError("sqrt of a negative number", node, x)
        return math.sqrt(x)
    raise ValueError(f"unknown node kind {op!r}")


def evaluate_many(exprs, point: Mapping) -> list[float]:
    return [evaluate(e, point) for e in exprs]


__all__ = [
    "differentiate",
    "gradient",
    "substitute",
    "simplify",
    "evaluate",
    "evaluate_many",
    "func",
]
