"""Exception hierarchy shared by all engine modules."""


class RegionVladError(Exception):
    """Base class for every error raised by this package."""


class FormatError(RegionVladError):
    """A binary container or header does not conform to its format."""


class DataError(RegionVladError):
    """Payload values violate a data invariant (e.g. non-finite activations)."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class IoError(RegionVladError):
    """Underlying file I/O failed."""


class ManifestError(RegionVladError):
    """A dataset manifest is malformed or internally inconsistent."""


class ConfigError(RegionVladError):
    """A configuration object violates its invariants."""


class InputError(RegionVladError):
    """Operation inputs are inconsistent with each other or out of range."""


class TrainError(RegionVladError):
    """Vocabulary training cannot proceed or produced an invalid codebook."""
