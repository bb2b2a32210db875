"""Exception hierarchy.

Errors are split into configuration problems (bad input data) and numerical
failures so the command line front end can map them to distinct exit codes.
"""


class AtlasError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(AtlasError):
    """Invalid user input: malformed files, impossible parameters."""


class NumericError(AtlasError):
    """A numerical procedure failed to produce a trustworthy answer."""


class DuplicateRoots(ConfigError):
    pass


class DegreeTooLow(ConfigError):
    pass


class RootSolveFailure(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class TraceStalled(NumericError):
    pass


class ResolutionTooCoarse(NumericError):
    pass


class NonInjectiveOnEdge(NumericError):
    pass


class BranchJumpDetected(NumericError):
    pass


class NotCoveredWithinBudget(NumericError):
    pass


class BudgetExceeded(NumericError):
    pass


class EpsilonTooLarge(NumericError):
    pass


class BoundaryThroughCriticalValue(NumericError):
    pass


class MaskDisconnected(NumericError):
    pass


class SkeletonAmbiguous(NumericError):
    pass


class CenterNotInTree(NumericError):
    pass


class SearchBudgetExceeded(NumericError):
    pass


class DegenerateTreeNoOrder(NumericError):
    pass


class MissingRay(NumericError):
    pass


class SeparationViolated(NumericError):
    pass


class DisconnectedGraph(ConfigError):
    pass
