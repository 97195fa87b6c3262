"""Exception hierarchy shared by all sdmax modules.

CLI exit-code mapping: ConfigError and argparse usage errors exit with 2,
FormatError with 3, NumericalError (and subclasses) with 4.
"""


class ContractViolationError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(ValueError):
    """A binary or text artifact failed to parse."""


class NumericalError(ArithmeticError):
    """A computation produced a numerically invalid result."""


class SingularityError(NumericalError):
    """A closed form was evaluated at a removable-singularity point (one-hot)."""


class DegenerateSubspaceError(NumericalError):
    """Requested principal subspace does not exist (rank deficiency)."""
