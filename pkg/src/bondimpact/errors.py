"""Exception hierarchy.

Two families: input/validation problems (bad parameters, bad domains,
bad config) and numerical-regime problems (ill conditioning, iteration
failure, violated solvability assumptions). The CLI maps the first
family to exit code 2 and the second to exit code 3.
"""


class ValidationError(ValueError):
    """Invalid input: parameters, grids, domains or configuration."""


class ParameterError(ValidationError):
    pass


class GridError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class MeasureTransformError(ValidationError):
    """Measure change would violate a positivity constraint."""


class DegenerateVolatilityError(ValidationError):
    """A bond volatility is zero where a division by it is required."""


class UnsupportedModelError(ValidationError):
    pass


class AggregationError(ValidationError):
    """Coupon-bond aggregation requires proportional kernels."""


class MissingInputError(ValidationError):
    pass


class ConfigError(ValidationError):
    """Config file rejected; message carries the offending key path."""


class NumericsError(RuntimeError):
    """Numerical-regime failure (exit code 3 in the CLI)."""


class ConditioningError(NumericsError):
    pass


class RegimeError(NumericsError):
    """Problem outside the implemented solution regime (e.g. fixed-point
    iteration fails to converge)."""


class AdmissibilityError(NumericsError):
    """Solvability assumptions of the execution problem are violated."""
