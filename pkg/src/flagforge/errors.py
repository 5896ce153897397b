"""Exception hierarchy shared by every stage of the pipeline."""


class FlagForgeError(Exception):
    """Base class for all errors raised by flagforge."""


# ast ingestion
class MalformedJson(FlagForgeError):
    pass


class SchemaMismatch(FlagForgeError):
    pass


class DuplicateId(FlagForgeError):
    pass


# graph extraction
class CoverageOutOfRange(FlagForgeError, ValueError):
    pass


# tokenizer
class EmptyCorpus(FlagForgeError, ValueError):
    pass


class VocabTooSmall(FlagForgeError, ValueError):
    pass


# numeric core
class ShapeMismatch(FlagForgeError, ValueError):
    pass


class NonFiniteValue(FlagForgeError, FloatingPointError):
    pass


class NotScalarLoss(FlagForgeError, ValueError):
    pass


class CheckpointError(FlagForgeError):
    pass


# model / training
class EmptyGraph(FlagForgeError, ValueError):
    pass


class EmptyDataset(FlagForgeError, ValueError):
    pass


class LabelOutOfRange(FlagForgeError, ValueError):
    pass


class ConfigMismatch(FlagForgeError):
    pass


class DegenerateDifferences(FlagForgeError, ValueError):
    pass


class InvariantViolation(FlagForgeError, AssertionError):
    pass
