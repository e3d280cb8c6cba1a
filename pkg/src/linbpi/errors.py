"""Exception types raised by the toolkit."""


class BPIError(Exception):
    """Base class for all toolkit errors."""


class InvalidPairError(BPIError, ValueError):
    """A pair of actions does not define a usable comparison (a == b or zero gap vector)."""


class DegenerateInstanceError(BPIError, ValueError):
    """The instance violates a structural assumption (rank, unique optimum, ...)."""


class InsufficientDataError(BPIError):
    """Not enough data has been collected for the requested estimate."""


class GateNotMetError(BPIError):
    """The covariates matrix is not positive definite enough for the GLR closed form."""


class TriviallySolvedError(BPIError):
    """Every policy is already eps-optimal: the characteristic time is zero."""


class NotLearnableError(BPIError, ValueError):
    """The requested subspace is not contained in the span of the sampled features."""
