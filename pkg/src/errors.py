"""
Error types raised by the toolkit.
Each error also derives from the closest builtin so callers can catch either.
"""


class FracError(Exception):
    """Base class for every error raised by the toolkit"""


class PoleError(FracError, ValueError):
    """Gamma evaluated at a non-positive integer"""


class DomainError(FracError, ValueError):
    """Order, time or argument outside the supported range"""


class GridMismatchError(FracError, ValueError):
    """Grid functions sampled on different grids"""


class ConvergenceError(FracError, ArithmeticError):
    """Series or quadrature did not reach its tolerance"""


class NonFiniteError(FracError, ArithmeticError):
    """A trajectory node became NaN or infinite"""


class SemigroupOverflowError(FracError, OverflowError):
    """Matrix exponential left the representable range"""


class EvalError(FracError, ArithmeticError):
    """Expression evaluation failed (division by zero)"""


class ProblemFileError(FracError, ValueError):
    """Problem file is malformed or inconsistent"""


class ParseError(FracError, ValueError):
    """Expression source does not match the grammar"""

    def __init__(self, message: str, offset: int, expected: set[str] | None = None):
        self.offset = offset
        self.expected = set(expected or ())
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")
