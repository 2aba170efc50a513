"""Exception types shared across the planning stack."""


class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


class UnreachableError(RuntimeError):
    """No traversable path connects the requested cells."""


class FormatError(ValueError):
    """A value cannot be represented in the sparse frontier wire format."""


class DecodeError(ValueError):
    """Base class for sparse frontier payload decoding failures."""


class BadMagicError(DecodeError):
    pass


class TruncatedPayloadError(DecodeError):
    pass


class CoordinateOutOfBoundsError(DecodeError):
    pass


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class NumericError(FloatingPointError):
    """Non-finite loss or gradient during training (CLI exit code 4)."""
