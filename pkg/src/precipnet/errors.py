"""Exception hierarchy shared by all modules."""


class PrecipNetError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class ConfigError(PrecipNetError, ValueError):
    exit_code = 2


class ParseError(PrecipNetError, ValueError):
    """A record file could not be parsed; carries the 1-based row number."""

    exit_code = 3

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemaError(PrecipNetError, ValueError):
    exit_code = 3


class ValidationError(PrecipNetError, ValueError):
    """A record violates a type invariant; ``field`` names the culprit."""

    exit_code = 3

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class BuildError(PrecipNetError):
    exit_code = 3


class QueryError(PrecipNetError, ValueError):
    exit_code = 3


class EstimationError(PrecipNetError):
    exit_code = 3


class NumericError(PrecipNetError, FloatingPointError):
    exit_code = 4


class TrainingError(PrecipNetError):
    """Divergence during training, tagged with epoch and batch coordinates."""

    exit_code = 4

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")


class RoutingError(PrecipNetError, ValueError):
    exit_code = 3


class FitError(PrecipNetError, ValueError):
    exit_code = 3


class GridError(PrecipNetError, ValueError):
    exit_code = 3


class AlignmentError(PrecipNetError, ValueError):
    exit_code = 3


class GradCheckFailure(PrecipNetError):
    exit_code = 5
