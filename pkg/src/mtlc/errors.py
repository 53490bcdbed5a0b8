"""Exception hierarchy shared by all mtlc modules.

Exit-code mapping used by the CLI: configuration problems exit 2,
missing inputs exit 3, numerical failures exit 4.
"""


class MtlcError(Exception):
    """Base class for all library errors."""


class ConfigError(MtlcError):
    """Invalid configuration value or inconsistent options."""


class SchemaError(ConfigError):
    """CSV header does not declare the required columns."""


class ParseError(MtlcError):
    """Malformed cell in an input file; message names row and column."""


class MissingInputError(MtlcError):
    """A required input file is absent."""


class ArityMismatchError(MtlcError):
    """Curve arguments inconsistent with the curve family's arity."""


class DomainError(MtlcError):
    """Curve argument outside the family's domain (e.g. ILOG2 at scaled n <= 1)."""


class UnderDeterminedError(MtlcError):
    """Fewer observations than free parameters (or degenerate variation)."""


class NonFiniteError(MtlcError):
    """Residual or Jacobian is not finite; usually a scaling problem."""


class UndefinedMetricError(MtlcError):
    """Metric undefined for the given labels (e.g. single-class AUROC)."""


class DegenerateInputError(MtlcError):
    """Zero rank variance; correlation undefined."""


class EmptySelectionError(MtlcError):
    """Training selection contains no labels for any task."""


class NonFiniteLossError(MtlcError):
    """Training loss diverged; message carries the epoch index."""


class ShapeMismatchError(MtlcError):
    """Matrix shape inconsistent with the model configuration."""


class NoLabelsError(MtlcError):
    """Batch carries no present label for the requested task."""


class NoDefinedPairsError(MtlcError):
    """No (source, target) pair with defined losses in the batch."""


class SpecMismatchError(MtlcError):
    """Observations do not cover identical spec sets across shifts."""


class InsufficientTasksError(MtlcError):
    """Fewer than three tasks with defined values; correlation skipped."""


class InsufficientPairsError(MtlcError):
    """Fewer than three overlapping (target, aux) pairs; correlation skipped."""
