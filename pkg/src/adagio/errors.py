class AdagioError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(AdagioError, ValueError):
    """Input file or array does not match the expected layout."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ModelFormatError(AdagioError, ValueError):
    """Serialized model is corrupt, truncated or from another version."""


class NumericalError(AdagioError, ArithmeticError):
    """A numerical routine failed (SVD did not converge, singular system, ...)."""
