"""Exception hierarchy shared across the library.

Every failure mode named in an operation contract maps to one of these, so
callers (and the CLI exit-code table) can dispatch on type rather than on
message text.
"""


class OdenetError(Exception):
    """Base class for all library errors."""


class DimensionError(OdenetError):
    """Operand shapes do not conform."""


class ConfigurationError(OdenetError):
    """Unknown name, bad key, or out-of-range setting."""


class ContractError(OdenetError):
    """An operation was called outside its stated precondition."""


class OverflowError_(OdenetError):
    """A step produced a non-finite state (numerical blow-up)."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ConvergenceError(OdenetError):
    """An iterative solve stopped above tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceWarningError(OdenetError):
    """A series expansion was requested outside its region of validity."""


class ParseError(OdenetError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class TrainingError(OdenetError):
    """Training diverged; carries the epoch at which the loss went non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
