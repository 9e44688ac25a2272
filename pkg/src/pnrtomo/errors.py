"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its valid domain."""


class ConfigError(ValueError):
    """A run configuration could not be parsed or validated."""


class SchemaError(ValueError):
    """A data file does not match the expected layout."""


class SolverError(RuntimeError):
    """The QP solver stopped before meeting its KKT tolerance.

    ``best`` holds the best iterate found (shape ``(n_outcomes, M + 1)``) and
    ``kkt_residual`` its projected-gradient norm.
    """

    def __init__(self, message, best=None, kkt_residual=float("nan"), iterations=0):
        super().__init__(message)
        self.best = best
        self.kkt_residual = kkt_residual
        self.iterations = iterations
