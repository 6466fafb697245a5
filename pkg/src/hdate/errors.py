"""Exception hierarchy.

``ConfigError`` subclasses map to CLI exit code 2 and ``NumericalError``
subclasses to exit code 3.
"""


class HdateError(Exception):
    exit_code = 1


class ConfigError(HdateError, ValueError):
    exit_code = 2


class DatasetFormatError(ConfigError):
    pass


class FoldInfeasibleError(ConfigError):
    def __init__(self, message, fold=None, arm=None):
        super().__init__(message)
        self.fold = fold
        self.arm = arm


class NumericalError(HdateError, ArithmeticError):
    exit_code = 3


class MleNonexistenceError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class DegeneratePropensityError(NumericalError):
    pass


class LooDegeneracyError(NumericalError):
    pass


class NoSolutionError(NumericalError):
    pass
