"""Exception hierarchy shared by every pipeline stage."""


class EmuTriageError(Exception):
    """Base class; ``code`` is the machine-readable name used in CLI error JSON."""

    @property
    def code(self) -> str:
        return type(self).__name__


# ingest
class MalformedJson(EmuTriageError):
    pass


class SchemaViolation(EmuTriageError):
    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)


class InvalidDigest(EmuTriageError):
    pass


class ManifestMissing(EmuTriageError):
    pass


class DuplicateSampleId(EmuTriageError):
    pass


class ReportMissing(EmuTriageError):
    def __init__(self, sample_id, path=None):
        self.sample_id = sample_id
        self.path = path
        super().__init__(f"{sample_id}: {path}" if path else sample_id)


class EmptyCorpus(EmuTriageError):
    pass


# pe_static
class NotPe(EmuTriageError):
    pass


class TruncatedHeader(EmuTriageError):
    pass


class MalformedImportDirectory(EmuTriageError):
    pass


# features / selection / ml
class LengthMismatch(EmuTriageError):
    pass


class EmptyMatrix(EmuTriageError):
    pass


class SingleClass(EmuTriageError):
    pass


class TooFewRows(EmuTriageError):
    pass


class DecisionMismatch(EmuTriageError):
    pass


class TooFewNeighbors(EmuTriageError):
    pass


class WidthMismatch(EmuTriageError):
    pass


# eval / cluster
class KTooLarge(EmuTriageError):
    pass


class InsufficientMalicious(EmuTriageError):
    pass


class NoEligibleFamilies(EmuTriageError):
    pass


class SingleCluster(EmuTriageError):
    pass


# datagen / cli
class InvalidSpec(EmuTriageError):
    pass


class ConfigError(EmuTriageError):
    pass
