"""Interned expression DAG.

Every node is built through the constructors in this module (``const``,
``sym``, ``add``, ``mul``, ``power``, ``func``), which apply a small set of
local canonicalizing rewrites and intern the result.  Two structurally equal
expressions are therefore the same Python object, so identity comparison,
``dict`` keys and memo tables all work on sub-expression sharing for free.
"""
from __future__ import annotations

import hashlib
import math
import weakref
from typing import Iterable, Iterator, Union

FUNCTIONS = ("tanh", "atanh", "ln", "exp", "sqrt")

Number = Union[int, float]


class Expr:
    """Immutable expression node.  Do not instantiate directly."""

    __slots__ = ("op", "args", "value", "digest", "mask", "__weakref__")

    op: str
    args: tuple
    value: object
    digest: bytes
    mask: int

    def __repr__(self) -> str:
        from .printer import to_string

        return f"Expr({to_string(self)!r})"

    def __str__(self) -> str:
        from .printer import to_string

        return to_string(self)

    def __reduce__(self):
        from .printer import to_string

        return (_reparse, (to_string(self),))

    # arithmetic sugar
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __rpow__(self, other):
        return power(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def is_sym(self) -> bool:
        return self.op == "sym"


def _reparse(text: str) -> Expr:
    from .parser import parse

    return parse(text)


_TABLE: "weakref.WeakValueDictionary[bytes, Expr]" = weakref.WeakValueDictionary()

# Symbol name -> bit position used in Expr.mask.  Grows monotonically.
_SYMBOL_BITS: dict[str, int] = {}


def _symbol_bit(name: str) -> int:
    bit = _SYMBOL_BITS.get(name)
    if bit is None:
        bit = len(_SYMBOL_BITS)
        _SYMBOL_BITS[name] = bit
    return bit


def _make(op: str, args: tuple = (), value: object = None) -> Expr:
    h = hashlib.blake2b(digest_size=16)
    h.update(op.encode())
    if value is not None:
        h.update(b"\x00")
        h.update(repr(value).encode())
    for a in args:
        h.update(b"\x01")
        h.update(a.digest)
    digest = h.digest()
    node = _TABLE.get(digest)
    if node is not None:
        return node
    node = object.__new__(Expr)
    node.op = op
    node.args = args
    node.value = value
    node.digest = digest
    if op == "sym":
        node.mask = 1 << _symbol_bit(value)  # type: ignore[arg-type]
    else:
        m = 0
        for a in args:
            m |= a.mask
        node.mask = m
    _TABLE[digest] = node
    return node


# ---------------------------------------------------------------------------
# leaves


def const(x: Number) -> Expr:
    x = float(x)
    if x == 0.0:
        x = 0.0  # drop the sign of -0.0
    return _make("const", (), x)


def sym(name: str) -> Expr:
    if not name or not (name[0].isalpha() or name[0] == "_"):
        raise ValueError(f"invalid symbol name {name!r}")
    return _make("sym", (), name)


ZERO = const(0.0)
ONE = const(1.0)
MINUS_ONE = const(-1.0)


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, float)):
        return const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to Expr")


def _order(nodes: Iterable[Expr]) -> list[Expr]:
    return sorted(nodes, key=lambda n: n.digest)


def _is_int(x: float) -> bool:
    return math.isfinite(x) and x == math.floor(x)


# ---------------------------------------------------------------------------
# sums


def _split_coef(t: Expr) -> tuple[float, Expr]:
    if t.op == "mul" and t.args[0].op == "const":
        rest = t.args[1:]
        return t.args[0].value, rest[0] if len(rest) == 1 else _make("mul", rest)  # type: ignore[return-value]
    return 1.0, t


def _scale(k: float, base: Expr) -> Expr:
    if k == 1.0:
        return base
    if base.op == "mul":
        return _make("mul", (const(k),) + base.args)
    return _make("mul", (const(k), base))


def add(*args: Expr) -> Expr:
    flat: list[Expr] = []
    for a in args:
        if a.op == "add":
            flat.extend(a.args)
        else:
            flat.append(a)
    c = 0.0
    coeffs: dict[Expr, float] = {}
    for t in flat:
        if t.op == "const":
            c += t.value  # type: ignore[operator]
            continue
        k, base = _split_coef(t)
        coeffs[base] = coeffs.get(base, 0.0) + k
    terms = _order(_scale(k, b) for b, k in coeffs.items() if k != 0.0)
    if not terms:
        return const(c)
    if c != 0.0:
        terms.insert(0, const(c))
    elif len(terms) == 1:
        return terms[0]
    return _make("add", tuple(terms))


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, mul(MINUS_ONE, b))


def neg(a: Expr) -> Expr:
    return mul(MINUS_ONE, a)


# ---------------------------------------------------------------------------
# products and powers


def mul(*args: Expr) -> Expr:
    pending = list(args)
    c = 1.0
    powers: dict[Expr, list[Expr]] = {}
    while pending:
        f = pending.pop()
        if f.op == "mul":
            pending.extend(f.args)
        elif f.op == "const":
            c *= f.value  # type: ignore[operator]
        elif f.op == "pow":
            powers.setdefault(f.args[0], []).append(f.args[1])
        else:
            powers.setdefault(f, []).append(ONE)
    if c == 0.0:
        return ZERO
    factors: list[Expr] = []
    for base, exps in powers.items():
        e = exps[0] if len(exps) == 1 else add(*exps)
        p = power(base, e)
        if p.op == "const":
            c *= p.value  # type: ignore[operator]
        elif p.op == "mul":
            # (a*b)^n distributed by power(); merge its factors back in
            for g in p.args:
                if g.op == "const":
                    c *= g.value  # type: ignore[operator]
                else:
                    factors.append(g)
        elif p is not ONE:
            factors.append(p)
    if c == 0.0:
        return ZERO
    if len(factors) > 1:
        # a distributed power can reintroduce a repeated base
        seen = {}
        dup = False
        for g in factors:
            b = g.args[0] if g.op == "pow" else g
            if b in seen:
                dup = True
                break
            seen[b] = True
        if dup:
            return mul(const(c), *factors)
    if not factors:
        return const(c)
    factors = _order(factors)
    if len(factors) == 1:
        f = factors[0]
        if c == 1.0:
            return f
        if f.op == "add":
            # numeric coefficients distribute over sums so like terms cancel
            return add(*[mul(const(c), t) for t in f.args])
        return _make("mul", (const(c), f))
    if c != 1.0:
        return _make("mul", (const(c),) + tuple(factors))
    return _make("mul", tuple(factors))


def div(a: Expr, b: Expr) -> Expr:
    return mul(a, power(b, MINUS_ONE))


def _pow_legal(b: float, e: float) -> bool:
    if b > 0.0:
        return True
    if b == 0.0:
        return e > 0.0
    return _is_int(e)


def power(b: Expr, e: Expr) -> Expr:
    if e.op == "const":
        ev: float = e.value  # type: ignore[assignment]
        if ev == 0.0:
            return ONE
        if ev == 1.0:
            return b
        if b.op == "const":
            bv: float = b.value  # type: ignore[assignment]
            if _pow_legal(bv, ev):
                try:
                    r = bv**ev
                except (OverflowError, ZeroDivisionError):
                    r = math.inf
                if isinstance(r, float) and math.isfinite(r):
                    return const(r)
            return _make("pow", (b, e))
        if _is_int(ev):
            if b.op == "pow":
                return power(b.args[0], mul(b.args[1], e))
            if b.op == "mul":
                return mul(*[power(f, e) for f in b.args])
            if b.op == "sqrt" and ev == 2.0:
                return b.args[0]
        return _make("pow", (b, e))
    if b.op == "const" and b.value == 1.0:
        return ONE
    return _make("pow", (b, e))


# ---------------------------------------------------------------------------
# unary functions


def _fold(name: str, x: float):
    if name == "tanh":
        return math.tanh(x)
    if name == "atanh":
        return math.atanh(x) if -1.0 < x < 1.0 else None
    if name == "ln":
        return math.log(x) if x > 0.0 else None
    if name == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            return None
    if name == "sqrt":
        return math.sqrt(x) if x >= 0.0 else None
    raise ValueError(f"unknown function {name!r}")


def func(name: str, x: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}; expected one of {FUNCTIONS}")
    if x.op == "const":
        r = _fold(name, x.value)  # type: ignore[arg-type]
        if r is not None:
            return const(r)
    return _make(name, (x,))


def tanh(x: Expr) -> Expr:
    return func("tanh", x)


def atanh(x: Expr) -> Expr:
    return func("atanh", x)


def ln(x: Expr) -> Expr:
    return func("ln", x)


def exp(x: Expr) -> Expr:
    return func("exp", x)


def sqrt(x: Expr) -> Expr:
    return func("sqrt", x)


# ---------------------------------------------------------------------------
# traversal helpers


def postorder(roots: Iterable[Expr]) -> Iterator[Expr]:
    """Yield each distinct node reachable from ``roots`` after its children."""
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                yield node
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for a in reversed(node.args):
                if id(a) not in seen:
                    stack.append((a, False))


def dag_size(*roots: Expr) -> int:
    return sum(1 for _ in postorder(roots))


def symbol_mask(names: Iterable[str]) -> int:
    m = 0
    for n in names:
        m |= 1 << _symbol_bit(n)
    return m


def free_symbols(e: Expr) -> set[str]:
    return {name for name, bit in _SYMBOL_BITS.items() if e.mask >> bit & 1}


def rebuild(op: str, args: tuple, value: object = None) -> Expr:
    """Construct a node of kind ``op`` through the canonicalizing constructor."""
    if op == "const":
        return const(value)  # type: ignore[arg-type]
    if op == "sym":
        return sym(value)  # type: ignore[arg-type]
    if op == "add":
        return add(*args)
    if op == "mul":
        return mul(*args)
    if op == "pow":
        return power(*args)
    return func(op, args[0])
