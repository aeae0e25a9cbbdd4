"""Exception types shared across the package."""


class GradACLError(Exception):
    pass


class ConfigError(GradACLError, ValueError):
    """Invalid configuration value, unknown key, or malformed config file."""

    def __init__(self, message, key=None, line=None):
        self.reason = message
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ShapeError(GradACLError, ValueError):
    pass


class ContractError(GradACLError, RuntimeError):
    """A caller broke an operation's precondition (stale cache, short batch, ...)."""


class NumericalError(GradACLError, ArithmeticError):
    pass


class PhaseError(GradACLError, RuntimeError):
    """Wraps a failure inside an experiment with the phase that raised it."""

    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"{phase} failed: {type(cause).__name__}: {cause}")
