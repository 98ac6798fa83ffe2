"""Recursive-descent parser for the textual expression grammar.

Grammar (``^`` is right-associative and binds tighter than unary minus)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("-" | "+") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"
    FUNC   := tanh | atanh | ln | exp | sqrt
"""
from __future__ import annotations

import re
from typing import Iterable

from .errors import ExprSyntaxError, UnknownIdentifierError
from .nodes import FUNCTIONS, Expr, add, const, div, func, mul, neg, power, sub, sym
from .symbols import SymbolTable

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        tok = m.group(kind)
        if tok == "**":
            tok = "^"
        tokens.append((kind, tok, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: set[str] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, tok, pos = self.take()
        if tok != value or kind == "end":
            found = "end of input" if kind == "end" else repr(tok)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, tok, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {tok!r}", self.text, pos)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self) -> Expr:
        kind, tok, _ = self.peek()
        if kind == "op" and tok in ("-", "+"):
            self.take()
            operand = self.unary()
            return neg(operand) if tok == "-" else operand
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, tok, _ = self.peek()
        if kind == "op" and tok == "^":
            self.take()
            return power(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, tok, pos = self.take()
        if kind == "num":
            return const(float(tok))
        if kind == "name":
            if tok in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(tok, arg)
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                raise ExprSyntaxError(f"unknown function {tok!r}", self.text, pos)
            if self.allowed is not None and tok not in self.allowed:
                raise UnknownIdentifierError(tok, self.text, pos)
            return sym(tok)
        if kind == "op" and tok == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(tok)
        raise ExprSyntaxError(f"expected a number, name or '(', found {found}", self.text, pos)


def parse(text: str, table: SymbolTable | Iterable[str] | None = None) -> Expr:
    """Parse ``text`` into an expression.

    With ``table`` given, every identifier must name one of its symbols.
    """
    if table is None:
        allowed = None
    elif isinstance(table, SymbolTable):
        allowed = set(table.names())
    else:
        allowed = set(table)
    return _Parser(text, allowed).parse()
