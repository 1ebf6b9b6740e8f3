"""Exception hierarchy shared across the toolkit."""


class ScmError(ValueError):
    """Base class for every error raised by synthctl."""


class PanelError(ScmError):
    """A panel or study definition violates its invariants."""


class CoverageError(ScmError):
    """A predictor has no usable pre-period observations for some unit."""


class DegeneratePoolError(ScmError):
    """The donor pool is empty, so no synthetic unit can be formed."""


class IngestError(ScmError):
    """Raised while reading panel CSVs or study configuration files."""


class FetchError(ScmError):
    """Remote indicator retrieval failed and the cache cannot cover it."""
