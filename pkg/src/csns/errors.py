"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the runner can translate
failures without a lookup table.
"""


class CSNSError(Exception):
    exit_code = 3


class ConfigError(CSNSError, ValueError):
    """Invalid configuration or grid/boundary construction input."""

    exit_code = 2


class PreconditionError(CSNSError, ValueError):
    """An operation was called outside its admissible input range."""

    exit_code = 2


class ExtensionError(ConfigError):
    """The boundary extension violates the divergence or bound constraint."""

    def __init__(self, message, max_violation=0.0):
        super().__init__(message)
        self.max_violation = float(max_violation)


class NumericalError(CSNSError):
    exit_code = 3


class StepSizeError(NumericalError):
    """Time step exceeds a stability limit; ``admissible_dt`` is the limit."""

    def __init__(self, message, admissible_dt):
        super().__init__(message)
        self.admissible_dt = float(admissible_dt)


class SchemeFailure(NumericalError):
    """Non-positive density, NaN/Inf, or a corrupted quadrature."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class ConvergenceError(NumericalError):
    """Picard coupling did not converge within the retry budget."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InvariantViolation(CSNSError):
    """A runtime invariant check failed."""

    exit_code = 1

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
