"""Exception types shared across the toolkit."""


class BdsdeError(Exception):
    """Base class for all toolkit errors."""


class CatalogError(BdsdeError):
    """Unknown problem name requested from the built-in catalog."""


class CapabilityError(BdsdeError):
    """An operation was requested that the given problem/backend does not support."""


class NumericError(BdsdeError):
    """A computation produced non-finite values or failed a numeric sanity gate."""


class ConditioningError(BdsdeError):
    """Normal equations too ill-conditioned to solve reliably."""

    def __init__(self, message: str, smallest_eigenvalue: float | None = None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class ConvergenceError(BdsdeError):
    """Fixed-point iteration failed to converge within the allowed iterations."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class ConfigError(BdsdeError):
    """Invalid run configuration; carries the offending key when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
