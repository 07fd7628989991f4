"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and failed verifications with 4.
"""


class MultiDefaultError(Exception):
    exit_code = 1


class ConfigurationError(MultiDefaultError, ValueError):
    exit_code = 2


class StructuralError(MultiDefaultError, ValueError):
    """A scenario-indexed table is missing an entry it must have."""

    exit_code = 2


class DomainError(MultiDefaultError, ValueError):
    exit_code = 2


class AdmissibilityError(MultiDefaultError, ValueError):
    """A strategy or jump table would drive wealth or asset values non-positive."""

    exit_code = 2

    def __init__(self, message, scenario=None, name=None, time=None, value=None):
        super().__init__(message)
        self.scenario = scenario
        self.name = name
        self.time = time
        self.value = value


class NumericalError(MultiDefaultError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, estimate=None, error_bound=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class ConditioningError(NumericalError):
    """The observed scenario carries zero conditional mass."""


class ValueFunctionInfinite(NumericalError):
    """A scenario value function is unbounded (the finiteness hypothesis fails)."""


class VerificationError(MultiDefaultError):
    exit_code = 4
