"""Exception types shared across the engine."""


class BundleFormatError(ValueError):
    """Raised when a tensor bundle file is malformed (bad magic, truncation,
    duplicate names). The message names the offending tensor and byte offset
    where that is known."""


class DegenerateMaskError(ValueError):
    """Raised when a non-empty reference mask vanishes at feature resolution,
    i.e. the object is smaller than one feature cell."""


class WeightShapeError(ValueError):
    """Raised when a weight bundle does not match the model configuration
    (missing tensor or wrong shape)."""


class DatasetError(ValueError):
    """Raised for malformed evaluation dataset layouts. The message names the
    object directory and file involved."""


class NonFiniteLossError(RuntimeError):
    """Raised when the scale-weight fit produces a non-finite loss."""
