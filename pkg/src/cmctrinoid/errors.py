"""Exception hierarchy shared by all modules."""


class TrinoidError(Exception):
    """Base class for every error raised by the package."""


class LoopError(TrinoidError):
    pass


class FactorizationError(TrinoidError):
    pass


class NotRealSymmetric(FactorizationError):
    pass


class NegativeSamples(FactorizationError):
    pass


class IdenticallyZero(FactorizationError):
    pass


class NotHermitianSymmetric(FactorizationError):
    pass


class NotPSD(FactorizationError):
    pass


class DegenerateDeterminant(FactorizationError):
    pass


class SpectralFactorizationDiverged(FactorizationError):
    pass


class SingularInput(FactorizationError):
    pass


class ZeroMultiplicityError(FactorizationError):
    """A circle zero of a scalar loop is not of order exactly two."""


class PotentialError(TrinoidError):
    pass


class WeightOutOfRange(PotentialError):
    pass


class InvalidWeights(PotentialError):
    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures or [])


class SingularGauge(PotentialError):
    pass


class ZeroUpperEntry(PotentialError):
    pass


class IntegrationError(TrinoidError):
    pass


class PoleTooClose(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    pass


class DiscontinuousBranch(TrinoidError):
    pass


class UnitarizationError(TrinoidError):
    pass


class KernelDimensionCollapse(UnitarizationError):
    pass


class UnitarityResidualExceeded(UnitarizationError):
    pass


class ClosureFailure(TrinoidError):
    pass


class InsufficientEndDepth(TrinoidError):
    pass


class PipelineFailure(TrinoidError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, stage: str, cause: BaseException | None = None):
        msg = f"stage '{stage}' failed"
        if cause is not None:
            msg += f": {type(cause).__name__}: {cause}"
        super().__init__(msg)
        self.stage = stage
        self.cause = cause
