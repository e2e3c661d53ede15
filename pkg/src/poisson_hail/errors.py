class PoissonHailError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(PoissonHailError, ValueError):
    """Invalid model or experiment parameters."""


class UsageError(PoissonHailError, ValueError):
    """An operation was called with inputs that violate its preconditions."""


class CapacityError(PoissonHailError, RuntimeError):
    """A run would exceed its memory/size budget.

    ``completed`` carries whatever partial progress the raising routine can
    report (e.g. the last finished branching generation).
    """

    def __init__(self, message, completed=None):
        super().__init__(message)
        self.completed = completed


class ChainViolation(PoissonHailError, AssertionError):
    """A coupled domination or equality check failed; ``witness`` locates it."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
