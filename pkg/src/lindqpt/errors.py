"""Exception hierarchy; the CLI maps each class to an exit code."""


class LindqptError(Exception):
    exit_code = 1


class DomainError(LindqptError, ValueError):
    """Invalid arguments: bad shapes, out-of-range parameters, empty subspaces."""

    exit_code = 2


class NumericError(LindqptError, ArithmeticError):
    """Overflow, non-convergence or an ill-conditioned decomposition."""

    exit_code = 3


class CapacityError(LindqptError):
    """The requested system does not fit the dense-matrix budget."""

    exit_code = 4


class UnsupportedModelError(DomainError):
    """Operation needs structure (e.g. particle-number labels) the model lacks."""


class DegeneratePointError(NumericError):
    """Band gap closes at a sampled momentum."""


class TimestepTooLargeError(NumericError):
    """Jump probabilities in one MCWF step sum to one or more."""
