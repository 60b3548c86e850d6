"""Exception types raised across the package."""


class RatioConsensusError(Exception):
    """Base class for all package errors."""


class InvalidVertex(RatioConsensusError, ValueError):
    pass


class NotStronglyConnected(RatioConsensusError, ValueError):
    pass


class GenerationTimeout(RatioConsensusError, RuntimeError):
    pass


class UnknownSender(RatioConsensusError, KeyError):
    pass


class MassLeak(RatioConsensusError, AssertionError):
    """The conservation audit failed; this is an implementation bug, never a protocol outcome."""

    def __init__(self, round_index, ledger, expected, observed):
        self.round_index = round_index
        self.ledger = ledger
        self.expected = expected
        self.observed = observed
        super().__init__(
            f"{ledger}-mass leak at round {round_index}: "
            f"expected {expected!r}, observed {observed!r}"
        )


class NotColumnStochastic(RatioConsensusError, ValueError):
    pass


class DimensionTooLarge(RatioConsensusError, MemoryError):
    pass


class ZeroInitialSum(RatioConsensusError, ZeroDivisionError):
    pass


class NotConverged(RatioConsensusError, RuntimeError):
    pass


class InfeasibleDemand(RatioConsensusError, ValueError):
    def __init__(self, message, *, rho_d=None, sum_min=None, sum_max=None):
        self.rho_d = rho_d
        self.sum_min = sum_min
        self.sum_max = sum_max
        super().__init__(message)


class InfeasibleDemandWarning(UserWarning):
    pass
