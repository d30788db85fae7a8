"""Exception hierarchy shared by every module."""


class DistDriftError(Exception):
    """Base class for all library errors."""


class NonPositiveSigma(DistDriftError):
    pass


class GridTooCoarse(DistDriftError):
    pass


class NotConverged(DistDriftError):
    pass


class NonMonotone(DistDriftError):
    pass


class OutOfRange(DistDriftError):
    pass


class ConsistencyError(DistDriftError):
    """Two evaluation routes of the same quantity disagree."""


class GridExitLimit(DistDriftError):
    pass


class WeightDegenerate(DistDriftError):
    pass


class UnboundedSigma0(DistDriftError):
    pass


class InsufficientPaths(DistDriftError):
    pass


class ScenarioError(DistDriftError):
    """Invalid or incomplete scenario file."""
