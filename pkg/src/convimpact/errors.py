"""Exception types shared across the toolkit.

Everything derives from ConvImpactError so the CLI can map library failures
to exit code 2 (user/input error) in one place.
"""


class ConvImpactError(Exception):
    pass


class DimensionError(ConvImpactError):
    """Tensor shapes do not line up for the requested operation."""


class EmptySequenceError(ConvImpactError):
    """An operation that needs at least one element got none."""


class ContractError(ConvImpactError):
    """A precondition on arguments was violated."""


class DataIntegrityError(ConvImpactError):
    """Dataset, embedding, or label content is inconsistent."""


class FormatError(ConvImpactError):
    """A file does not conform to its declared format."""


class DivergenceError(ConvImpactError):
    """Training produced a non-finite loss."""


class DegenerateEvaluationError(ConvImpactError):
    """A metric was requested on inputs that cannot support it."""


class UndefinedMetricError(ConvImpactError):
    """The metric is mathematically undefined on these inputs."""
