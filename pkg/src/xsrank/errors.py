"""Exception types shared across the package."""


class XsrankError(Exception):
    """Base class for package errors."""


class ConfigError(XsrankError):
    """Invalid or inconsistent configuration."""


class DataError(XsrankError):
    """Malformed or insufficient input data."""


class ShapeError(XsrankError):
    """Tensor shape mismatch in a primitive."""


class NonFiniteError(XsrankError):
    """A NaN or Inf appeared where only finite values are allowed."""


class TapeError(XsrankError):
    """Misuse of the differentiation tape."""
