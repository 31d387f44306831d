"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SpdFitError(Exception):
    exit_code = 3


class InputError(SpdFitError, ValueError):
    """Malformed user input (files, specs, shapes)."""

    exit_code = 1


class DimensionError(InputError):
    pass


class DomainError(SpdFitError, ValueError):
    """A matrix or value lies outside the domain of the requested operation."""

    exit_code = 1


class DegenerateInputError(DomainError):
    pass


class NonCoerciveError(SpdFitError):
    """The objective is provably not geodesically coercive: no minimizer exists."""

    exit_code = 2

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NumericalError(SpdFitError):
    exit_code = 3


class StepFailureError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RunawayError(NumericalError):
    pass


class IllConditionedHessianWarning(RuntimeWarning):
    pass
