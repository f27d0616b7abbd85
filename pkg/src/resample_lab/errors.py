"""Exception hierarchy shared by all modules."""


class ResampleLabError(Exception):
    """Base class for all library errors."""


class InvalidWeightError(ResampleLabError):
    """A raw weight is negative, NaN, or otherwise unusable."""


class DegenerateWeightsError(ResampleLabError):
    """Every weight is zero; the particle system carries no information."""


class OutOfRangeError(ResampleLabError):
    """A uniform variate fell outside the half-open interval (0, 1]."""


class InvalidConfigError(ResampleLabError):
    """A configuration object violates its invariants."""


class UnsupportedOrderingError(ResampleLabError):
    """Analytic counter-example formulas requested for an ordering they do not cover."""


class SupportConditionViolatedError(ResampleLabError):
    """The density pair puts non-negligible mass where alpha*g(x) is an integer."""


class DegenerateKappaError(ResampleLabError):
    """The scaled-variance limit is undefined because resampling becomes deterministic."""
