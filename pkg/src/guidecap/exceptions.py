"""Exception hierarchy.

Each class carries the process exit code the command line maps it to.
"""


class GuidecapError(Exception):
    exit_code = 1


class ConfigError(GuidecapError, ValueError):
    exit_code = 1


class DimensionError(GuidecapError, ValueError):
    exit_code = 2


class DataError(GuidecapError, ValueError):
    exit_code = 2


class StateError(GuidecapError, RuntimeError):
    exit_code = 1


class NumericalError(GuidecapError, ArithmeticError):
    """Non-finite loss, gradient or finite-difference evaluation."""

    exit_code = 3
