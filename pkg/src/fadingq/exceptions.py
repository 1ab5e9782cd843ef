"""Exception types raised by fadingq."""


class UnstableLoadError(ValueError):
    """Load theta outside the stable region required by a stationary result."""


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class ConvergenceError(RuntimeError):
    """An iterative routine exhausted its budget before meeting its tolerance."""


class ConfigurationError(ValueError):
    """Inconsistent or incomplete parameter set."""
