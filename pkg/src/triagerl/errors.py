"""Exception taxonomy shared across the triage engine."""


class TriageError(Exception):
    """Base class for all engine-raised errors."""


class SchemaError(TriageError):
    """A report object is missing a field, has a mistyped field, or carries
    an unknown key. The message names the offending field and array index."""


class UnlabeledRecordError(TriageError):
    """A split was requested over records that lack ground-truth labels."""


class RatioError(TriageError):
    """Split ratios are malformed (wrong count, nonpositive, or not summing to 1)."""


class DigestMismatch(TriageError):
    """A feature vector, sidecar, or checkpoint refers to a different manifest."""


class SnippetTooLarge(TriageError):
    """Refusal to featurize a code snippet above the size cap."""


class FeatureValidationError(TriageError):
    """A feature vector violates manifest invariants (NaN, flag/ratio range, length)."""


class EmptyTrainSet(TriageError):
    """Normalizer fitting needs at least two training vectors."""


class LengthMismatch(TriageError):
    """A state or vector length disagrees with the manifest."""


class IllegalAction(TriageError):
    """An action was requested in a state where it is not legal."""


class DimensionMismatch(TriageError):
    """Network parameters and input state disagree on dimensions."""


class DegenerateDistribution(TriageError):
    """All action probabilities are zero after masking."""


class NonFiniteLoss(TriageError):
    """A PPO update produced a non-finite loss; the update is aborted."""


class EmptySplit(TriageError):
    """A required dataset split has no records."""


class UnknownPattern(TriageError):
    """No harness template exists for the warning's bug pattern."""


class UnresolvableTarget(TriageError):
    """No callable entry point could be extracted from the warning."""


class MissingRecording(TriageError):
    """The recorded-outcomes file has no entry for the requested warning id."""


class EmptyInput(TriageError):
    """An operation that needs at least one element received none."""
