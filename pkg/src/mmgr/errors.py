"""Exception types shared across the package."""


class MMGRError(Exception):
    """Base class for all package errors."""


class ShapeError(MMGRError, ValueError):
    """Tensor shapes are inconsistent with an operation."""


class ParameterError(MMGRError, ValueError):
    """An argument is outside its valid range."""


class StateError(MMGRError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class FormatError(MMGRError, ValueError):
    """A file on disk does not match the expected format."""


class AlignmentError(MMGRError, ValueError):
    """Two collections keyed by sample id do not line up."""


class ConfigError(MMGRError, ValueError):
    """A configuration is incomplete or inconsistent."""
