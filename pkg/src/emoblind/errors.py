"""Exception hierarchy. The CLI maps each family to an exit status."""


class EmoblindError(Exception):
    exit_code = 4


class ConfigError(EmoblindError, ValueError):
    """Invalid configuration value or unknown key."""

    exit_code = 1


class DataError(EmoblindError, ValueError):
    """Dataset content cannot support the requested operation."""

    exit_code = 2


class ShapeError(DataError):
    """Array dimensions do not compose."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(EmoblindError, ArithmeticError):
    """Non-finite values or an undefined metric."""

    exit_code = 3


class RankError(NumericError):
    pass


class UndefinedMetricError(NumericError):
    pass
