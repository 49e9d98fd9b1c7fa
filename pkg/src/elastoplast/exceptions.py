class ElastoplastError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(ElastoplastError, ValueError):
    """An argument violates the documented precondition of an operation."""


class InfeasibleError(PreconditionError):
    """A requested control construction has no admissible solution."""


class BlowUpError(ElastoplastError, RuntimeError):
    """A simulated state left the numerically meaningful range."""


class ConfigError(PreconditionError):
    """Invalid experiment configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
