"""Exception hierarchy shared by all stages."""


class SptreeError(Exception):
    """Base class for every error raised by this package."""


class FormatError(SptreeError, ValueError):
    """A binary container could not be parsed."""


class MissingFile(SptreeError, FileNotFoundError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class LengthMismatch(FormatError):
    """Arrays that must share a length N disagree."""


class DimensionMismatch(FormatError):
    pass


class NonSimplexRow(FormatError):
    pass


class InvalidScene(SptreeError, ValueError):
    pass


class IndexOutOfRange(SptreeError, IndexError):
    pass


class DegenerateScene(SptreeError, ValueError):
    pass


class MissingGroundTruth(SptreeError, ValueError):
    pass


class InvalidNode(SptreeError, IndexError):
    pass


class MissingFeature(SptreeError, ValueError):
    pass


class MissingSoftLabels(SptreeError, ValueError):
    pass


class EmptyProposal(SptreeError, ValueError):
    pass


class EmptyProposalSet(SptreeError, ValueError):
    pass


class ShapeMismatch(SptreeError, ValueError):
    pass


class NoForegroundPoints(SptreeError, ValueError):
    pass


class PipelineError(SptreeError):
    """Wraps a module error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
