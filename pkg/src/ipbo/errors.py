"""Exception types raised across the package."""


class IPBOError(Exception):
    """Base class for every error raised by :mod:`ipbo`."""


class ShapeMismatch(IPBOError, ValueError):
    pass


class DimensionMismatch(IPBOError, ValueError):
    pass


class ZeroVarianceColumn(IPBOError, ValueError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"predictor column {column} has zero variance")


class NotConverged(IPBOError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``best`` carries the last (best available) iterate so callers can still
    use or persist it.
    """

    def __init__(self, max_iter, best=None, residual=None, what="solver"):
        self.max_iter = max_iter
        self.best = best
        self.residual = residual
        msg = f"{what} did not converge in {max_iter} iterations"
        if residual is not None:
            msg += f" (residual {residual:.3e})"
        super().__init__(msg)


class NonPSDInput(IPBOError, ValueError):
    pass


class NonPositiveDiagonal(IPBOError, ValueError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"precision matrix has non-positive diagonal at {index}")


class TargetUnreachable(IPBOError, RuntimeError):
    pass


class DimensionTooSmall(IPBOError, ValueError):
    def __init__(self, example_id, requirement):
        self.example_id = example_id
        self.requirement = requirement
        super().__init__(f"example {example_id} requires {requirement}")


class DimensionGuard(IPBOError, ValueError):
    pass


class ParseError(IPBOError, ValueError):
    def __init__(self, line, reason=""):
        self.line = line
        super().__init__(f"parse error at line {line}: {reason}".rstrip(": "))


class EmptyPanel(IPBOError, ValueError):
    pass


class InsufficientData(IPBOError, ValueError):
    pass


class MissingLabels(IPBOError, ValueError):
    pass


class WindowMisalignment(IPBOError, ValueError):
    pass


class ConstantSeries(IPBOError, ValueError):
    pass
