"""
Exception types shared across beliefsignal.
"""


class ContractViolation(ValueError):
    """A precondition of an operation was violated by its caller."""


class InadmissibleActionError(ContractViolation):
    """A signal action was applied outside the legally admissible set."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ConfigError(ValueError):
    """A configuration document could not be read or has the wrong shape."""
