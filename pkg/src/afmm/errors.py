"""Exception hierarchy shared by every module.

Each class carries the process exit code the CLI maps it to.
"""


class AfmmError(Exception):
    exit_code = 1


class ConfigError(AfmmError, ValueError):
    """Invalid configuration (bad ranges, unknown keys, burn_in >= horizon...)."""

    exit_code = 1


class ContractError(AfmmError, ValueError):
    """A caller broke a documented precondition (length mismatch, empty input)."""

    exit_code = 1


class DataError(AfmmError, ValueError):
    """Input data is malformed, missing, or inconsistent."""

    exit_code = 2


class NumericalError(AfmmError, ArithmeticError):
    """Rank deficiency, singular design, or similar numerical failure."""

    exit_code = 3


class UndefinedStatisticError(NumericalError):
    """A statistic is undefined for the given input (e.g. rank correlation of a constant)."""
