"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class GrowthsimError(Exception):
    exit_code = 1


class ConfigError(GrowthsimError, ValueError):
    exit_code = 2


class DataError(GrowthsimError, ValueError):
    exit_code = 3


class NumericError(GrowthsimError, ArithmeticError):
    exit_code = 4
