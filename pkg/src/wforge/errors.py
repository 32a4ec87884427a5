"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to.
"""


class WForgeError(Exception):
    exit_code = 1


class ConfigError(WForgeError, ValueError):
    exit_code = 2


class PreconditionError(WForgeError, ValueError):
    exit_code = 3


class DomainError(PreconditionError):
    """A point or field lies outside its admissible region."""


class InsufficientExtensionError(PreconditionError):
    """The extension margin is smaller than the requested mollification scale."""


class UnsupportedOrderError(PreconditionError):
    pass


class DecompositionError(PreconditionError):
    """A matrix (field) is not positive definite where it must be."""

    def __init__(self, message, point=None, eigenvalue=None):
        super().__init__(message)
        self.point = point
        self.eigenvalue = eigenvalue


class ParameterError(PreconditionError):
    pass


class DegreeUndefinedError(PreconditionError):
    """The target lies too close to the image of the boundary."""

    def __init__(self, message, clearance=None, tolerance=None):
        super().__init__(message)
        self.clearance = clearance
        self.tolerance = tolerance


class NonConvergenceError(WForgeError):
    exit_code = 4

    def __init__(self, message, last_residual=None, last_lambda=None):
        super().__init__(message)
        self.last_residual = last_residual
        self.last_lambda = last_lambda


class SchemeError(WForgeError):
    """A stage or scheme invariant failed; carries the trace collected so far."""

    exit_code = 4

    def __init__(self, message, trace=None, phase=None, stage=None):
        super().__init__(message)
        self.trace = trace or []
        self.phase = phase
        self.stage = stage


class FormatError(WForgeError):
    exit_code = 5


class InputError(PreconditionError):
    pass
