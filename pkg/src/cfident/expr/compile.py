"""Turn expression DAGs into fast numeric evaluators.

Two targets:

* :class:`Tape` flattens a (possibly huge) DAG into opcode arrays that the
  kernels in :mod:`cfident.kernels` interpret over a batch of points.  Used
  for observability-identifiability matrices, whose Lie-derivative DAGs can
  reach 10^5 nodes.
* :func:`source` emits straight-line Python for a small expression, suitable
  for ``numba.njit`` or for numpy broadcasting.  Used for model dynamics in
  the simulation inner loop.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .calculus import evaluate
from .errors import DomainError, UnboundSymbolError
from .nodes import Expr, free_symbols, postorder

OP_CONST, OP_VAR, OP_ADD, OP_MUL, OP_POW = 0, 1, 2, 3, 4
OP_TANH, OP_ATANH, OP_LN, OP_EXP, OP_SQRT = 5, 6, 7, 8, 9
_FUNC_CODES = {"tanh": OP_TANH, "atanh": OP_ATANH, "ln": OP_LN, "exp": OP_EXP, "sqrt": OP_SQRT}


class Tape:
    """Flattened DAG with a fixed variable order.

    ``evaluate(points)`` takes an array of shape ``(B, len(variables))`` and
    returns ``(B, len(outputs))``.  Non-finite entries signal a domain
    violation; :meth:`diagnose` re-runs the checked interpreter on one point
    to name the offending sub-expression.
    """

    def __init__(self, outputs: Sequence[Expr], variables: Sequence[str]):
        self.outputs = list(outputs)
        self.variables = list(variables)
        var_index = {n: i for i, n in enumerate(self.variables)}
        missing = set()
        for e in self.outputs:
            missing |= free_symbols(e) - set(var_index)
        if missing:
            raise UnboundSymbolError(sorted(missing)[0])
        nodes = list(postorder(self.outputs))
        pos = {id(n): i for i, n in enumerate(nodes)}
        n = len(nodes)
        self.op = np.empty(n, dtype=np.int64)
        self.cval = np.zeros(n, dtype=np.float64)
        self.slot = np.full(n, -1, dtype=np.int64)
        self.ptr = np.zeros(n + 1, dtype=np.int64)
        idx: list[int] = []
        for i, node in enumerate(nodes):
            k = node.op
            if k == "const":
                self.op[i] = OP_CONST
                self.cval[i] = node.value
            elif k == "sym":
                self.op[i] = OP_VAR
                self.slot[i] = var_index[node.value]
            else:
                self.op[i] = {"add": OP_ADD, "mul": OP_MUL, "pow": OP_POW}.get(k) or _FUNC_CODES[k]
                idx.extend(pos[id(a)] for a in node.args)
            self.ptr[i + 1] = len(idx)
        self.args = np.asarray(idx, dtype=np.int64)
        self.out = np.asarray([pos[id(e)] for e in self.outputs], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.op)

    def evaluate(self, points: np.ndarray, backend: str | None = None) -> np.ndarray:
        from .. import kernels

        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=np.float64)))
        if pts.shape[1] != len(self.variables):
            raise ValueError(f"points must have {len(self.variables)} columns, got {pts.shape[1]}")
        return kernels.eval_tape(self, pts, backend=backend)

    def point(self, binding: Mapping[str, float]) -> np.ndarray:
        try:
            return np.array([binding[n] for n in self.variables], dtype=np.float64)
        except KeyError as err:
            raise UnboundSymbolError(err.args[0]) from None

    def diagnose(self, row: np.ndarray) -> DomainError | None:
        binding = dict(zip(self.variables, map(float, row)))
        for e in self.outputs:
            try:
                evaluate(e, binding)
            except DomainError as err:
                return err
        return None


# ---------------------------------------------------------------------------
# straight-line source

_NP_FUNCS = {"tanh": "np.tanh", "atanh": "np.arctanh", "ln": "np.log", "exp": "np.exp", "sqrt": "np.sqrt"}


def _const_src(x: float) -> str:
    text = repr(float(x))
    return f"({text})" if x < 0 else text


def source(
    e: Expr,
    name: str,
    scalars: Sequence[str],
    vector: tuple[str, Sequence[str]] | None = None,
) -> str:
    """Python source for ``def name(*scalars[, vec]): return e``.

    ``vector = (arg, names)`` binds ``names[i]`` to ``arg[i]`` so a parameter
    vector can be passed as one array argument.
    """
    params = list(scalars) + ([vector[0]] if vector else [])
    lines = [f"def {name}({', '.join(params)}):"]
    local: dict[str, str] = {}
    for i, n in enumerate(scalars):
        local[n] = n
    if vector:
        arg, names = vector
        for i, n in enumerate(names):
            local[n] = f"_p{i}"
            lines.append(f"    _p{i} = {arg}[{i}]")
    missing = free_symbols(e) - set(local)
    if missing:
        raise UnboundSymbolError(sorted(missing)[0])
    ref: dict[int, str] = {}
    count = 0
    for node in postorder([e]):
        op = node.op
        if op == "const":
            ref[id(node)] = _const_src(node.value)  # type: ignore[arg-type]
            continue
        if op == "sym":
            ref[id(node)] = local[node.value]  # type: ignore[index]
            continue
        a = [ref[id(c)] for c in node.args]
        if op == "add":
            rhs = " + ".join(a)
        elif op == "mul":
            rhs = " * ".join(a)
        elif op == "pow":
            rhs = f"{a[0]} ** {a[1]}"
        else:
            rhs = f"{_NP_FUNCS[op]}({a[0]})"
        tmp = f"_t{count}"
        count += 1
        lines.append(f"    {tmp} = {rhs}")
        ref[id(node)] = tmp
    lines.append(f"    return {ref[id(e)]}")
    return "\n".join(lines) + "\n"


def lambdify(e: Expr, scalars: Sequence[str], vector=None, name: str = "fn"):
    src = source(e, name, scalars, vector)
    namespace: dict = {"np": np}
    exec(compile(src, f"<cfident:{name}>", "exec"), namespace)
    fn = namespace[name]
    fn.__source__ = src
    return fn
