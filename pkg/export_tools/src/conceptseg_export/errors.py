class ExportError(ValueError):
    """Base class for everything this package raises on bad input."""


class ManifestError(ExportError):
    """Malformed or incomplete manifest. Names the offending key or the
    first required tensor the mapping fails to cover."""


class SourceTensorError(ExportError):
    """A mapped source tensor is absent from the checkpoint. The message
    carries both the source name and the bundle name it maps to."""
