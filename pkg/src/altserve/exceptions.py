"""Exception hierarchy shared by the solvers, the simulator and the CLI."""


class AltServeError(Exception):
    """Base class for all errors raised by :mod:`altserve`."""


class OutOfFamilyError(AltServeError, ValueError):
    """Requested moments cannot be matched by the chosen distribution family."""


class UndefinedSCVError(AltServeError, ValueError):
    """Squared coefficient of variation requested for a zero-mean law."""


class NumericFailure(AltServeError, ArithmeticError):
    """A linear system is singular or too ill-conditioned to trust."""


class InconsistentSolution(NumericFailure):
    """A solve produced probabilities outside [0, 1] beyond rounding slack."""


class InsufficientRunError(AltServeError, RuntimeError):
    """A simulated path did not contain enough regeneration cycles."""


class SpecError(AltServeError, ValueError):
    """An experiment spec or law description failed validation."""
