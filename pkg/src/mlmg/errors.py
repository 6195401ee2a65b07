"""Exception types shared across the package."""


class MLMGError(Exception):
    """Base class for all package errors."""


class ParseError(MLMGError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(MLMGError, ValueError):
    """Invalid configuration or precondition violation."""


class HierarchyError(MLMGError, ValueError):
    """Invalid class hierarchy (self-edge, cycle, unknown class)."""


class NumericalError(MLMGError, ArithmeticError):
    """A numerical routine failed (SVD non-convergence, oracle stall)."""


class DecompositionInfeasible(NumericalError):
    """The sparse + low-rank solver cannot produce a valid decomposition."""


class UndefinedMetric(MLMGError, ValueError):
    """A metric has no defined value on the requested subset."""
