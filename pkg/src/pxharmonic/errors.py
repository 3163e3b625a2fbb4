"""Exception hierarchy for the engine.

Numerical failures (degenerate metrics, rank-degenerate points, stalled
line searches) are kept distinct from configuration mistakes so the CLI
can map them to different exit codes.
"""


class EngineError(Exception):
    """Base class for all engine failures."""


class DegenerateMetricError(EngineError):
    """Metric is not positive definite at an evaluated point."""


class DomainError(EngineError):
    """Point outside the admissible domain, or a violated geometric precondition."""


class AdmissibilityError(EngineError):
    """Exponent field evaluated below its admissibility floor p >= 2."""


class DegeneratePointError(EngineError):
    """Rank-degenerate point (|dphi| ~ 0) where the exponent makes the limit singular."""


class NotPHarmonicError(EngineError):
    """Operation requires a map with vanishing variable-exponent tension field."""


class EmptyDomainError(EngineError):
    """Quadrature domain retained zero cells."""


class StagnationError(EngineError):
    """Flow line search failed to make progress; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class CatalogError(EngineError):
    """Unknown catalog entry or invalid constructor parameters."""


class ConfigError(EngineError):
    """Malformed or inconsistent scenario configuration."""
