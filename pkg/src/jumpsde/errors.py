"""Exception hierarchy.

Configuration problems and numerical failures are kept apart so the CLI can
map them onto distinct exit codes.
"""


class JumpSdeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(JumpSdeError, ValueError):
    """A parameter violates an operation's precondition."""


class ConfigError(JumpSdeError):
    """A run configuration could not be parsed or validated."""


class NumericalError(JumpSdeError):
    """Base class for failures that happen while computing."""


class SolverDivergenceError(NumericalError):
    """The implicit stage of a theta step did not converge.

    Attributes
    ----------
    residual : float
        Largest residual norm left after the last iteration.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual norm {residual:.3e})")
        self.residual = residual


class SingularParameterError(NumericalError):
    """A closed-form expression has a vanishing denominator."""


class NotApplicableError(NumericalError):
    """The hypotheses behind a closed-form bound are not met."""


class InsufficientDataError(NumericalError):
    """Too few usable points to fit or classify."""
