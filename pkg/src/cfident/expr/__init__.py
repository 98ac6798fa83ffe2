"""Minimal computer-algebra core for model dynamics and Lie derivatives."""
from .calculus import differentiate, evaluate, evaluate_many, gradient, simplify, substitute
from .compile import Tape, lambdify, source
from .errors import (
    DomainError,
    ExprError,
    ExprSyntaxError,
    ExpressionTooLarge,
    UnboundSymbolError,
    UnknownIdentifierError,
)
from .nodes import (
    FUNCTIONS,
    ONE,
    ZERO,
    Expr,
    add,
    as_expr,
    atanh,
    const,
    dag_size,
    div,
    exp,
    free_symbols,
    func,
    ln,
    mul,
    neg,
    postorder,
    power,
    sqrt,
    sub,
    sym,
    tanh,
)
from .parser import parse
from .printer import to_string
from .symbols import AUX, INPUT, PARAMETER, STATE, Symbol, SymbolTable, input_name

__all__ = [
    "AUX",
    "DomainError",
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "ExpressionTooLarge",
    "FUNCTIONS",
    "INPUT",
    "ONE",
    "PARAMETER",
    "STATE",
    "Symbol",
    "SymbolTable",
    "Tape",
    "UnboundSymbolError",
    "UnknownIdentifierError",
    "ZERO",
    "add",
    "as_expr",
    "atanh",
    "const",
    "dag_size",
    "differentiate",
    "div",
    "evaluate",
    "evaluate_many",
    "exp",
    "free_symbols",
    "func",
    "gradient",
    "input_name",
    "lambdify",
    "ln",
    "mul",
    "neg",
    "parse",
    "postorder",
    "power",
    "simplify",
    "source",
    "sqrt",
    "sub",
    "substitute",
    "sym",
    "tanh",
    "to_string",
]
