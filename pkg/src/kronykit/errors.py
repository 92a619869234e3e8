"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class FormatError(ValueError):
    """A checkpoint file is malformed (bad magic, bad manifest, bad bounds)."""


class DataError(ValueError):
    """Input data is unusable (corpus too small, empty held-out text, ...)."""
