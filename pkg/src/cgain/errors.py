"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class CgainError(Exception):
    exit_code = 1


class ConfigError(CgainError, ValueError):
    exit_code = 2


class UsageError(ConfigError):
    pass


class DataError(CgainError, ValueError):
    exit_code = 3


class IngestionError(DataError):
    pass


class NumericError(CgainError, ArithmeticError):
    exit_code = 4


class ShapeError(CgainError, ValueError):
    exit_code = 3


class StateError(CgainError, RuntimeError):
    exit_code = 3


class MetricUndefinedError(CgainError, ValueError):
    exit_code = 3
