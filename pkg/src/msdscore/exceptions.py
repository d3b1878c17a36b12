"""Exception hierarchy for the MSD scoring engine."""


class MsdError(Exception):
    """Base class for all engine errors."""


# geometry
class ZeroVectorError(MsdError):
    pass


class DegeneratePoolingError(MsdError):
    pass


class DimMismatchError(MsdError):
    pass


class EmptyInputError(MsdError):
    pass


# mixtures / EM
class EmptyDataError(MsdError):
    pass


class NotAProbabilityRowError(MsdError):
    pass


class OutOfRangeError(MsdError):
    pass


class LengthMismatchError(MsdError):
    pass


# divergence
class KappaMismatchError(MsdError):
    pass


class GridMismatchError(MsdError):
    pass


class AllMaskedError(MsdError):
    pass


# scoring
class EmptyCandidatesError(MsdError):
    pass


# evaluation statistics
class EmptyEvalError(MsdError):
    pass


class DegenerateRanksError(MsdError):
    pass


class TooFewClustersError(MsdError):
    pass


# file formats
class ContainerError(MsdError):
    pass


class BadMagicError(ContainerError):
    pass


class VersionUnsupportedError(ContainerError):
    pass


class BadHeaderError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    def __init__(self, msg, byte_offset=None):
        super().__init__(msg)
        self.byte_offset = byte_offset


class DegenerateRowError(ContainerError):
    pass


class ManifestError(MsdError):
    def __init__(self, msg, line=None):
        super().__init__(msg)
        self.line = line


class ParseError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class MissingPathError(ManifestError):
    pass


class MixedFingerprintError(MsdError):
    pass
