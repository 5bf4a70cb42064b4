"""Exception types; each carries the CLI exit code it maps to."""


class HobzError(Exception):
    code = "ERROR"
    exit_code = 1


class ValidationError(HobzError, ValueError):
    code = "VALIDATION"
    exit_code = 2


class NumericError(HobzError, ArithmeticError):
    code = "NUMERIC"
    exit_code = 3


class DataIOError(HobzError, OSError):
    code = "IO"
    exit_code = 4
