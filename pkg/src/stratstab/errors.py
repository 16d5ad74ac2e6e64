"""Exception hierarchy.

Validation problems (bad inputs, bad configs) derive from ``ValueError`` so
that callers can treat them like any other argument error; numerical
breakdowns derive from ``NumericalError``.  The CLI maps the two families to
different exit codes.
"""


class StratstabError(Exception):
    """Base class for all package errors."""


class ValidationError(StratstabError, ValueError):
    """Inputs violate a documented precondition."""


class ModelError(ValidationError):
    pass


class MatrixFormatError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericalError(StratstabError, ArithmeticError):
    """A computation could not be carried out to the required accuracy."""


class SpectralError(NumericalError):
    pass


class SingularGramError(NumericalError):
    def __init__(self, message, condition_number=float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class TuningError(NumericalError):
    def __init__(self, message, best_rate=float("nan"), best_sigma=float("nan")):
        super().__init__(message)
        self.best_rate = best_rate
        self.best_sigma = best_sigma


class BlowUpError(NumericalError):
    def __init__(self, message, step=-1):
        super().__init__(message)
        self.step = step
