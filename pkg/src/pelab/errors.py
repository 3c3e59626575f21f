"""Exception types shared across the toolkit."""


class PelabError(Exception):
    """Base class for every error raised by pelab."""


class DomainError(PelabError, ValueError):
    """A time window or sample point falls outside a declared domain."""


class EvaluationError(PelabError, ArithmeticError):
    """A user function returned a non-finite value.

    ``tau`` and ``x`` record where the evaluation failed.
    """

    def __init__(self, message, tau=None, x=None):
        super().__init__(message)
        self.tau = tau
        self.x = x


class ContractError(PelabError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(PelabError, ValueError):
    """An experiment configuration could not be parsed."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
