from __future__ import annotations

from .nodes import Expr

_ADD, _MUL, _NEG, _POW, _ATOM = 1, 2, 3, 4, 5


def _num(x: float) -> str:
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _wrap(text: str, prec: int, ctx: int) -> str:
    return f"({text})" if prec < ctx else text


def _is_negative(e: Expr) -> bool:
    if e.op == "const":
        return e.value < 0  # type: ignore[operator]
    return e.op == "mul" and e.args[0].op == "const" and e.args[0].value < 0  # type: ignore[operator]


def _negated(e: Expr) -> Expr:
    from .nodes import mul, MINUS_ONE

    return mul(MINUS_ONE, e)


def _fmt(e: Expr) -> tuple[str, int]:
    op = e.op
    if op == "const":
        v: float = e.value  # type: ignore[assignment]
        return _num(v), (_NEG if v < 0 else _ATOM)
    if op == "sym":
        return e.value, _ATOM  # type: ignore[return-value]
    if op == "add":
        parts = []
        for i, t in enumerate(e.args):
            if i and _is_negative(t):
                text, prec = _fmt(_negated(t))
                parts.append(" - " + _wrap(text, prec, _MUL))
            else:
                text, prec = _fmt(t)
                parts.append((" + " if i else "") + _wrap(text, prec, _ADD + (1 if i else 0)))
        return "".join(parts), _ADD
    if op == "mul":
        coef = 1.0
        args = e.args
        if args[0].op == "const":
            coef = args[0].value  # type: ignore[assignment]
            args = args[1:]
        num, den = [], []
        for f in args:
            if f.op == "pow" and f.args[1].op == "const" and f.args[1].value < 0:  # type: ignore[operator]
                from .nodes import power, const

                den.append(power(f.args[0], const(-f.args[1].value)))  # type: ignore[operator]
            else:
                num.append(f)
        num_txt = [_wrap(*_fmt(f), _MUL) for f in num]
        text = "*".join(num_txt) if num_txt else "1"
        if den:
            if len(den) == 1:
                d_txt = _wrap(*_fmt(den[0]), _POW)
            else:
                d_txt = "(" + "*".join(_wrap(*_fmt(f), _MUL) for f in den) + ")"
            text = f"{text}/{d_txt}"
        if coef == 1.0:
            return text, _MUL
        # c*(a + b) alone is distributed on construction, so a coefficient
        # in front of a longer product holding a sum must bind to the whole
        # product or re-parsing would distribute it early.
        if len(num) + len(den) > 1 and any(f.op == "add" for f in num):
            text = f"({text})"
        if coef == -1.0:
            return "-" + text, _NEG
        text = _fmt_abs_coef(coef)[0] + "*" + text
        return ("-" + text, _NEG) if coef < 0 else (text, _MUL)
    if op == "pow":
        b, x = e.args
        if x.op == "const" and x.value < 0:  # type: ignore[operator]
            from .nodes import power, const

            inner = power(b, const(-x.value))  # type: ignore[operator]
            return "1/" + _wrap(*_fmt(inner), _POW), _MUL
        b_txt = _wrap(*_fmt(b), _ATOM)
        x_txt, x_prec = _fmt(x)
        return f"{b_txt}^{_wrap(x_txt, x_prec, _ATOM)}", _POW
    # unary function
    inner, _ = _fmt(e.args[0])
    return f"{op}({inner})", _ATOM


def _fmt_abs_coef(c: float) -> tuple[str, int]:
    return _num(abs(c)), _ATOM


def to_string(e: Expr) -> str:
    """Render ``e`` in the infix grammar accepted by :func:`parse`."""
    return _fmt(e)[0]
