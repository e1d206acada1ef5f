"""Exception hierarchy shared by all modules."""


class IdealError(Exception):
    """Base class for every error raised by this package."""


class DuplicateId(IdealError):
    pass


class DanglingEndpoint(IdealError):
    pass


class NonpositiveLength(IdealError):
    pass


class SelfLoop(IdealError):
    pass


class UnknownNode(IdealError):
    pass


class InvalidOd(IdealError):
    pass


class Unreachable(IdealError):
    pass


class TooLarge(IdealError):
    pass


class DimMismatch(IdealError):
    pass


class NonfiniteLoss(IdealError):
    pass


class EmptyDataset(IdealError):
    pass


class NotPositiveDefinite(IdealError):
    pass


class NotSymmetric(IdealError):
    pass


class ZeroRadius(IdealError):
    pass


class ZeroMatrix(IdealError):
    pass


class NoConvergence(IdealError):
    pass


class UnboundedRadius(IdealError):
    pass


class NonpositiveSlope(IdealError):
    pass


class CycleGuard(IdealError):
    pass


class PrefixBroken(IdealError):
    pass


class AllZero(IdealError):
    pass


class Empty(IdealError):
    pass
