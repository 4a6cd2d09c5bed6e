"""Exception types; each maps to a CLI exit code."""


class GraphFMError(Exception):
    exit_code = 1


class ConfigError(GraphFMError, ValueError):
    exit_code = 2


class DataError(GraphFMError, ValueError):
    exit_code = 3


class NumericError(GraphFMError, FloatingPointError):
    exit_code = 4
