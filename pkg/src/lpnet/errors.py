"""Exception hierarchy shared by every lpnet module."""


class LPNetError(Exception):
    """Base class for all lpnet failures."""


class TopologyError(LPNetError):
    """Network dimensions or matrix shapes do not line up."""


class ParameterError(LPNetError, ValueError):
    """A scalar or vector parameter is outside its admissible range."""


class ConditioningError(LPNetError):
    """A weight subproblem is unbounded or its quadratic form is ill-posed."""


class SingularityError(LPNetError):
    """A required matrix inverse or log-determinant does not exist."""


class ContextError(LPNetError):
    """A local objective was requested without the neighbour state it needs."""


class DivergenceError(LPNetError):
    """Training produced a non-finite weight or representation."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class DescentError(LPNetError):
    """An alternating step increased the local objective beyond tolerance."""


class LevelError(LPNetError):
    """Wraps a solver failure with the node level that raised it."""

    def __init__(self, level: int, cause: Exception):
        super().__init__(f"level {level}: {cause}")
        self.level = level
        self.cause = cause


class FormatError(LPNetError):
    """A binary file has the wrong magic number or layout."""


class ConsistencyError(LPNetError):
    """Two inputs that must agree (e.g. image and label counts) do not."""


class ConfigError(LPNetError):
    """An experiment configuration could not be parsed or validated."""
