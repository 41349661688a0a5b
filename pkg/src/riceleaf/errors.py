"""Exception types shared across the package."""


class RiceleafError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RiceleafError, ValueError):
    """Tensor or layer shapes are incompatible with the requested operation."""


class ConfigError(RiceleafError, ValueError):
    """Invalid or inconsistent configuration (presets, freeze policies, CLI)."""


class ValidationError(RiceleafError, ValueError):
    """Input data violates a contract (e.g. a target row is not one-hot)."""


class DecodeError(RiceleafError, ValueError):
    """An image byte stream could not be decoded.

    ``offset`` is the byte position at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(DecodeError):
    """The image format (or format variant) is recognised but not supported."""


class ModelFormatError(RiceleafError, ValueError):
    """A model file is not in the expected container format (bad magic)."""


class ModelCorruptionError(ModelFormatError):
    """A model file has the right magic but inconsistent contents.

    ``field`` names the manifest field or tensor at fault.
    """

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{message} (field: {field})"
        super().__init__(message)
        self.field = field


class InternalError(RiceleafError, RuntimeError):
    """Internal consistency violated (stale caches, out-of-range indices)."""


class TrainingError(RiceleafError, RuntimeError):
    """Training aborted (non-finite loss or gradient), with context."""
