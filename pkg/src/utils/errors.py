"""Exception hierarchy for the stability probe."""

from typing import Any, Dict, Optional


class StabilityProbeError(RuntimeError):
    """Base class for every error raised by the probe services."""


class ProblemInputError(StabilityProbeError, ValueError):
    """Malformed problem data: dimension mismatch, unknown id, bad file."""


class ConfigError(StabilityProbeError, ValueError):
    """Invalid run or solver configuration."""


class UnsupportedOperationError(StabilityProbeError):
    """Operation not defined for this kind of problem body or convex piece."""


class EmptySubdifferentialError(StabilityProbeError):
    """The point lies outside the effective domain of the convex piece."""


class NumericalFailureError(StabilityProbeError):
    """An LP or linear-algebra step failed; diagnostics are attached."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmptyLocalProblemError(StabilityProbeError):
    """No finite objective value was found inside the localization ball."""


class ProbeError(StabilityProbeError):
    """A probe precondition failed at a specific sweep node."""

    def __init__(self, message: str, node: Optional[Any] = None):
        super().__init__(message)
        self.node = node
