class ExprError(Exception):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {pointer}")


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name: str, text: str, position: int):
        self.name = name
        super().__init__(f"unknown identifier {name!r}", text, position)


class UnboundSymbolError(ExprError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"symbol {name!r} has no value in the evaluation point")

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the real domain of an operation.

    ``node`` is the offending sub-expression and ``operand`` the value that
    triggered the violation.
    """

    def __init__(self, reason: str, node=None, operand: float | None = None, binding=None):
        self.reason = reason
        self.node = node
        self.operand = operand
        self.binding = dict(binding) if binding is not None else None
        msg = reason
        if node is not None:
            from .printer import to_string

            text = to_string(node)
            if len(text) > 200:
                text = text[:197] + "..."
            msg += f" in {text}"
        if operand is not None:
            msg += f" (operand = {operand!r})"
        if self.binding:
            pairs = ", ".join(f"{k}={v:.6g}" for k, v in self.binding.items())
            msg += f" at {{{pairs}}}"
        super().__init__(msg)


class ExpressionTooLarge(ExprError):
    def __init__(self, size: int, cap: int, what: str = "expression"):
        self.size = size
        self.cap = cap
        super().__init__(
            f"{what} grew to {size} nodes, above the cap of {cap}; "
            "raise node_cap or reduce the derivative order"
        )
