from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .nodes import Expr, sym

STATE = "state"
PARAMETER = "parameter"
INPUT = "input"
AUX = "aux"


def input_name(order: int, base: str = "u") -> str:
    """Name of the ``order``-th time derivative of the input (``u``, ``u_1``, ...)."""
    return base if order == 0 else f"{base}_{order}"


@dataclass(frozen=True)
class Symbol:
    name: str
    kind: str
    order: int | None = None  # derivative order for input symbols

    @property
    def expr(self) -> Expr:
        return sym(self.name)


@dataclass(frozen=True)
class SymbolTable:
    """Ordered, write-once collection of symbols.

    The augmented state is ``states + parameters`` in that order; input
    derivatives ``u, u_1, ..., u_J`` follow.
    """

    symbols: tuple[Symbol, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, s in enumerate(self.symbols):
            if s.name in index:
                raise ValueError(f"duplicate symbol name {s.name!r}")
            index[s.name] = i
        orders = sorted(s.order for s in self.symbols if s.kind == INPUT)
        if orders != list(range(len(orders))):
            raise ValueError("input derivatives must form a contiguous family u, u_1, ..., u_J")
        object.__setattr__(self, "_index", index)

    @classmethod
    def build(
        cls,
        states: Iterable[str],
        parameters: Iterable[str],
        input_order: int = 0,
        aux: Iterable[str] = (),
        input_base: str = "u",
    ) -> "SymbolTable":
        syms = [Symbol(n, STATE) for n in states]
        syms += [Symbol(n, PARAMETER) for n in parameters]
        syms += [Symbol(input_name(j, input_base), INPUT, j) for j in range(input_order + 1)]
        syms += [Symbol(n, AUX) for n in aux]
        return cls(tuple(syms))

    def __contains__(self, name) -> bool:
        if isinstance(name, Expr):
            name = name.value
        return name in self._index

    def __iter__(self):
        return iter(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __getitem__(self, name: str) -> Symbol:
        return self.symbols[self._index[name]]

    def names(self, kind: str | None = None) -> list[str]:
        return [s.name for s in self.symbols if kind is None or s.kind == kind]

    @property
    def states(self) -> list[str]:
        return self.names(STATE)

    @property
    def parameters(self) -> list[str]:
        return self.names(PARAMETER)

    @property
    def inputs(self) -> list[str]:
        return [s.name for s in sorted((s for s in self.symbols if s.kind == INPUT), key=lambda s: s.order)]

    @property
    def augmented(self) -> list[str]:
        return self.states + self.parameters

    @property
    def input_order(self) -> int:
        return len(self.inputs) - 1
