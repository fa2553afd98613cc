"""Exception hierarchy shared across the package."""


class ComposeProbeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ComposeProbeError):
    """Invalid configuration (empty crop sizes, bad dims, bad flags)."""


class RasterError(ComposeProbeError):
    """Malformed raster data."""


class BoundsError(ComposeProbeError):
    """Geometry outside the image."""


class ConsistencyError(ComposeProbeError):
    """Inputs that contradict each other (annotation vs caption, scene graphs)."""


class DataFormatError(ComposeProbeError):
    """Malformed data files (dataset JSONL, manifests)."""


class StoreFormatError(ComposeProbeError):
    """Embedding store file with bad magic or version."""


class StoreCorruptionError(ComposeProbeError):
    """Embedding store file truncated or internally inconsistent."""


class StoreWriteError(ComposeProbeError):
    """Attempt to write an invalid store (e.g. duplicate keys)."""


class CacheMissError(ComposeProbeError):
    """Required embedding keys absent from a store."""

    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__(f"missing embedding keys: {', '.join(self.keys)}")


class DegenerateInputError(ComposeProbeError):
    """Numerically unusable input (zero-norm row, empty matrix)."""


class ProtocolError(ComposeProbeError):
    """Remote encoder responded outside its declared contract."""


class TransportError(ComposeProbeError):
    """Retryable transport-level failure talking to a remote encoder."""


class SceneParseError(ComposeProbeError):
    """Scene JSON violating the expected schema."""

    def __init__(self, message, scene_index=None):
        self.scene_index = scene_index
        if scene_index is not None:
            message = f"scene {scene_index}: {message}"
        super().__init__(message)


class PlacementError(ComposeProbeError):
    """No free location found for an added object."""


class ExhaustionError(ComposeProbeError):
    """Not enough valid scenes to build the requested split."""

    def __init__(self, requested, achievable):
        self.requested = requested
        self.achievable = achievable
        super().__init__(
            f"requested {requested} instances but only {achievable} buildable"
        )


class NumericError(ComposeProbeError):
    """Non-finite values produced inside the alignment transformer."""


class ScorerError(ComposeProbeError):
    """A scorer failed on a retrieval instance."""
