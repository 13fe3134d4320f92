"""Exception types raised by the lab."""


class LabError(Exception):
    """Base class for all lab errors."""


class ConfigurationError(LabError, ValueError):
    """Invalid experiment configuration or inconsistent inputs."""


class NumericalFailure(LabError, RuntimeError):
    """A computation could not produce a trustworthy number."""


class FlowDivergenceError(NumericalFailure):
    """Flow solution left the bounded region (norm cap exceeded)."""


class FlowStiffnessError(NumericalFailure):
    """Adaptive integrator step size underflowed."""


class IterateOverflowError(NumericalFailure):
    """A stochastic recursion produced a non-finite iterate."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"Non-finite iterate at index {index}")


class EstimationError(NumericalFailure):
    """Too few usable points for a fit or an estimate."""


class NormOverflowError(NumericalFailure):
    """Weighted sequence norm exceeded the representable range."""
