"""Exception types raised across the package."""


class DogclrError(Exception):
    pass


# ingestion / data model
class NTUParseError(DogclrError, ValueError):
    pass


class MalformedHeader(NTUParseError):
    pass


class TruncatedFile(MalformedHeader):
    pass


class JointCountMismatch(NTUParseError):
    pass


class EmptyFile(NTUParseError):
    pass


class NoFrames(NTUParseError):
    pass


class UnknownTemplate(DogclrError, ValueError):
    pass


class EmptySplit(DogclrError, ValueError):
    pass


class MissingParentMap(DogclrError, ValueError):
    pass


class SkelpackError(DogclrError, ValueError):
    pass


# graph / weights
class IndexOutOfRange(DogclrError, IndexError):
    pass


class DegenerateGraph(DogclrError, ValueError):
    pass


# encoder / localization
class ShapeMismatch(DogclrError, ValueError):
    pass


class ZeroVector(DogclrError, ValueError):
    pass


class NonDifferentiableConfig(DogclrError, ValueError):
    pass


class InvalidTheta(DogclrError, ValueError):
    pass


# memory bank
class InvalidDistribution(DogclrError, ValueError):
    pass


class EmptyBank(DogclrError, ValueError):
    pass


class BankNotFull(DogclrError, RuntimeError):
    pass


# training / evaluation
class EmptyBatch(DogclrError, ValueError):
    pass


class LabelMismatch(DogclrError, ValueError):
    pass


class EmptyTrain(DogclrError, ValueError):
    pass


class MisalignedStreams(DogclrError, ValueError):
    pass


class IOFailure(DogclrError, OSError):
    """An output artifact could not be written."""


class ConfigError(DogclrError, ValueError):
    """Invalid or inconsistent configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
