"""Exception hierarchy.

Every error carries a ``category`` (its class name) so the CLI can emit a
machine-parsable failure line and a stable exit code.
"""


class BtsError(Exception):
    exit_code = 1

    @property
    def category(self) -> str:
        return type(self).__name__


# ingestion
class IngestError(BtsError, ValueError):
    exit_code = 10


class MalformedFilename(IngestError):
    pass


class UnknownCode(IngestError):
    pass


class MalformedRow(IngestError):
    pass


class NonMonotoneInterval(IngestError):
    pass


class DuplicatePatient(IngestError):
    pass


class UnparsableRow(IngestError):
    pass


class InvalidAge(IngestError):
    pass


class MissingAnnotation(IngestError):
    pass


class MissingDemographics(IngestError):
    pass


class SplitMismatch(IngestError):
    pass


# audio
class AudioError(BtsError, ValueError):
    exit_code = 20


class OutOfBounds(AudioError):
    pass


class EmptySegment(AudioError):
    pass


class InvalidRate(AudioError):
    pass


# text
class TextError(BtsError, ValueError):
    exit_code = 30


class MissingAttribute(TextError):
    pass


class MissingBmi(TextError):
    pass


# model
class ModelError(BtsError):
    exit_code = 40


class TokenBudgetExceeded(ModelError, ValueError):
    pass


class EncoderFailure(ModelError, RuntimeError):
    pass


class ShapeMismatch(ModelError, ValueError):
    pass


class DimensionMismatch(ModelError, ValueError):
    pass


class InvalidLabel(ModelError, ValueError):
    pass


class CheckpointNotFound(ModelError, FileNotFoundError):
    pass


class CheckpointIncompatible(ModelError, ValueError):
    pass


# training / evaluation
class EvalError(BtsError):
    exit_code = 50


class EmptyClass(EvalError, ValueError):
    pass


class DivergedLoss(EvalError, RuntimeError):
    pass


class MissingReport(EvalError, FileNotFoundError):
    pass


class MissingManifest(IngestError):
    pass
