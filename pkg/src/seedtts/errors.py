"""Exception and warning types shared across the package."""


class DataError(Exception):
    """A data file or data set is unusable (missing, malformed, inconsistent)."""


class IngestError(DataError):
    """An audio file could not be read or decoded."""


class LabelError(DataError):
    """A label file is malformed; carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class InsufficientDataError(DataError):
    """Not enough speakers or speech duration to satisfy a protocol constraint."""


class ConfigError(Exception):
    """Invalid configuration or incompatible arguments."""


class NumericalError(Exception):
    """A non-finite value appeared where a finite one is required."""


class AllSilenceWarning(UserWarning):
    """Silence trimming found no speech at all; the output clip is empty."""


class ShortUtteranceWarning(UserWarning):
    """An utterance was too short to produce a single training window."""


class DegenerateFeatureWarning(UserWarning):
    """A feature with zero variance was excluded from z-normalization."""
