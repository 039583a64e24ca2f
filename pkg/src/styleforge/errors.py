"""Exception hierarchy used across the package.

Everything raised on purpose derives from StyleForgeError so callers can
catch one base class at the boundary (CLI, service) and map it to an exit
code or HTTP status.  Configuration problems (bad shapes, unknown layer
names, inconsistent options) are kept distinct from numeric failures
(non-finite values, degenerate statistics) because the former are caller
bugs and the latter are data problems.
"""


class StyleForgeError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ConfigurationError(StyleForgeError):
    """A caller-supplied option, shape or name is invalid or inconsistent."""


class UnknownLayerError(ConfigurationError):
    """A layer name does not exist in the network."""


class NumericError(StyleForgeError):
    """A computation produced or received non-finite or degenerate values."""


class ZeroMassRegionError(NumericError):
    """A guidance channel has zero mass at some layer and cannot be normalised.

    Carries the offending layer and region id so the caller can report
    exactly which mask vanished (typically a thin region eroded away at a
    deep layer).
    """

    def __init__(self, layer: str, region: str):
        self.layer = layer
        self.region = region
        super().__init__(
            f"guidance channel for region {region!r} has zero mass at layer "
            f"{layer!r}; the region is too small to survive at this scale"
        )


class WeightFileError(StyleForgeError):
    """A weight file could not be read or failed validation."""


class BadMagicError(WeightFileError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(WeightFileError):
    """The file declares a format version this reader does not understand."""


class TruncatedFileError(WeightFileError):
    """The file ended before all declared payload bytes were read."""


class LayerShapeError(WeightFileError):
    """A stored tensor's shape does not match the fixed network architecture."""


class ChecksumError(WeightFileError):
    """The payload checksum recorded in the file does not match its contents."""
