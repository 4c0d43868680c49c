"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Malformed network, action, state or run configuration."""


class DomainError(ValueError):
    """A numeric argument lies outside its admissible domain."""


class ConsistencyError(RuntimeError):
    """Internal bookkeeping no longer adds up; the run must abort."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, gap=None, iterations=None):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


class NonInteriorError(ValueError):
    """The capacity region has (numerically) empty interior."""


class ResourceError(RuntimeError):
    """A request would exceed the configured computational budget."""


class BenchmarkViolation(RuntimeError):
    """Delivered utility exceeded the static upper bound T * OPT."""
