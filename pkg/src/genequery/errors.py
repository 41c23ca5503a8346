"""Exception hierarchy.

Each family maps to one CLI exit code: usage/argument problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class GeneQueryError(Exception):
    exit_code = 1


class ArgumentError(GeneQueryError, ValueError):
    exit_code = 1


class ConfigError(ArgumentError):
    pass


class ShapeError(GeneQueryError, ValueError):
    exit_code = 1


class StateError(GeneQueryError):
    exit_code = 1


class DataError(GeneQueryError):
    exit_code = 2


class MissingFileError(DataError, FileNotFoundError):
    pass


class DimensionMismatchError(DataError):
    pass


class DuplicateGeneError(DataError):
    pass


class NegativeCountError(DataError):
    pass


class UnknownIdError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownGeneError(UnknownIdError):
    pass


class FormatError(DataError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NumericError(GeneQueryError, ArithmeticError):
    exit_code = 3
