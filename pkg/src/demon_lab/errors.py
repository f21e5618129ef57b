"""Exception types raised across the package."""


class ValidationError(ValueError):
    """Input violates a numeric invariant (Hermiticity, trace, normalization...)."""


class ConfigError(ValueError):
    """Configuration is malformed or incomplete."""

    def __init__(self, message, *, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class EnumerationCapError(RuntimeError):
    """Exact enumeration requested beyond the configured size cap."""


class ZeroProbabilityError(ArithmeticError):
    """A conditional probability required by a stochastic quantity vanishes."""


class IrreversibilityError(RuntimeError):
    """Sufficient conditions for vanishing absolute irreversibility are violated.

    ``violations`` lists ``(kind, n, a_n, window)`` tuples; ``kind`` is
    ``"initial"`` for p(b_1) = 0 or ``"post-measurement"`` for
    p(a_n|Y_n^k) P[Y_n^k] = 0.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        head = ", ".join(str(v) for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"absolute-irreversibility sufficient conditions violated: {head}{more}")
