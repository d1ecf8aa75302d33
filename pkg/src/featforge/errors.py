"""Exception types shared across the package."""


class FeatForgeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FeatForgeError):
    """Fatal configuration problem: bad paths, schema violations, 4xx responses."""


class ParseFailure(FeatForgeError):
    """A model response (rationale or feature code) could not be parsed."""


class FeatureDegenerate(FeatForgeError):
    """A materialized feature column is entirely missing or constant."""

    def __init__(self, feature: str, reason: str):
        super().__init__(f"feature {feature!r} is degenerate: {reason}")
        self.feature = feature
        self.reason = reason


class GatewayError(FeatForgeError):
    """The chat endpoint failed after exhausting the retry budget."""


class TrainError(FeatForgeError):
    """The GBDT learner cannot be fit on the given data."""


class MetricError(FeatForgeError):
    """A metric is undefined for the given inputs."""


class SearchError(FeatForgeError):
    """Every candidate subset evaluation failed."""


class EmptyPoolError(FeatForgeError):
    """A run log contains no successful records to pool."""


class MathError(FeatForgeError):
    """Numeric inputs violate the preconditions of a closed-form computation."""
