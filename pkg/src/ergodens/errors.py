"""Exception hierarchy shared across the package."""


class ErgodensError(Exception):
    """Base class for all package errors."""


class DomainError(ErgodensError, ArithmeticError):
    """An expression was evaluated outside its domain.

    ``path`` names the offending node, e.g. ``root/add[1]/div.den``.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{message} at {path}" if path else message)
        self.path = path


class ParameterError(ErgodensError, ValueError):
    pass


class NumericalBlowupError(ErgodensError, FloatingPointError):
    """A simulation produced non-finite state."""

    def __init__(self, message, state=None, path_index=None):
        super().__init__(message)
        self.state = state
        self.path_index = path_index


class SolverError(ErgodensError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class UnsupportedDimensionError(ErgodensError, ValueError):
    pass


class PrecisionError(ErgodensError, ArithmeticError):
    pass


class ConfigError(ErgodensError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
