"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data violates a documented invariant or precondition."""


class EmptyNeighborhoodError(ValidationError):
    """No prior interactions exist around the target edge; explanation impossible."""


class ShapeError(ValueError):
    """Tensor or layer shapes are inconsistent."""


class NumericalError(RuntimeError):
    """A numerical operation produced non-finite values."""


class CandidateLimitError(ValueError):
    """Candidate count exceeds the exhaustive-enumeration bound."""


class MetricError(ValueError):
    """A metric is undefined for the given input."""
