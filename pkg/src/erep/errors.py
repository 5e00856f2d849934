"""Exception and warning types shared across the package."""


class ErepError(Exception):
    """Base class for all package errors."""


class DataError(ErepError, ValueError):
    """Input data violates a format or validity requirement."""


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ValidationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class GroupingError(DataError):
    pass


class ParameterError(ErepError, ValueError):
    """Invalid algorithm or solver parameter."""


class NumericError(ErepError, ArithmeticError):
    """A computation produced a non-finite or out-of-domain value."""


class ConfigError(ErepError):
    pass


class ConvergenceWarning(UserWarning):
    """An iterative solver hit its iteration cap before meeting tolerance."""


class SolverError(ErepError):
    """A run was aborted because an inner solver failed to converge (strict mode)."""
