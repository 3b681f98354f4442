class InvalidConfigurationError(Exception):
    """Raised anytime a run cannot proceed because configuration is missing, invalid or incomplete"""


class DataError(Exception):
    """Base exception for dataset ingestion and generation errors."""


class EmptyDatasetError(DataError):
    """Raised when a dataset, a split partition or a mask selection has too few rows."""


class DatasetParseError(DataError):
    """Raised when a CSV cell or row cannot be parsed."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ChecksumMismatchError(DataError):
    """Raised when the bundled star-cluster asset does not match its recorded checksum."""


class NumericalFailureError(ArithmeticError):
    """Raised when a loss, gradient or parameter becomes NaN/Inf."""

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class DimensionMismatchError(ValueError):
    """Raised when inputs, layers or gradients do not chain dimensionally."""


class OutputPathError(RuntimeError):
    """Raised when the output directory is unsafe or cannot be written."""


EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_NUMERICAL_FAILURE = 4
EXIT_OUTPUT_ERROR = 5
