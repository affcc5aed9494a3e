"""Exception hierarchy shared across the package."""


class GeobuckleError(Exception):
    """Base class for all package errors."""


class DimensionError(GeobuckleError, ValueError):
    """Array shapes do not conform."""


class InputError(GeobuckleError, ValueError):
    """An argument lies outside its admissible domain."""


class NumericError(GeobuckleError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class IntegrityError(GeobuckleError):
    """On-disk data is missing, truncated or self-inconsistent."""


class CheckpointError(IntegrityError):
    """A checkpoint file is corrupt or has an unsupported version."""


class ShapeMismatchError(CheckpointError, DimensionError):
    """Checkpoint tensors do not match the requested model configuration."""
