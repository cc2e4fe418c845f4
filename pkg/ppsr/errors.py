"""Exception hierarchy shared by the library, the CLI and the Bob service.

Every error carries the process exit code the CLI reports for it.
"""

from __future__ import annotations


class PPSRError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(PPSRError, ValueError):
    """Invalid configuration (file, overrides or derived parameters)."""

    exit_code = 2


class DataError(PPSRError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class DimensionError(DataError, ValueError):
    """Matrix or vector shapes do not line up."""


class ProtocolError(PPSRError):
    """The two-party protocol could not complete."""

    exit_code = 4


class FramingError(ProtocolError):
    """A wire message could not be parsed."""


class OutOfOrderError(ProtocolError):
    """A message arrived that the receiving state machine does not expect."""


class ProtocolViolation(ProtocolError):
    """A well-formed message carried content the protocol forbids."""


class NoNeighborsError(ProtocolError):
    """The target user has no other users to aggregate over."""


class KeyMismatchError(ProtocolError, ValueError):
    """Ciphertexts or keys from different keypairs were combined."""


class PlaintextRangeError(ProtocolError, ValueError):
    """A plaintext does not fit the modulus or the fixed-point range."""


class KeyGenerationError(ProtocolError):
    """Prime generation failed after the bounded number of retries."""


class RangeOverflowError(ConfigError, ProtocolError):
    """Aggregated plaintexts could wrap around the modulus.

    Raised at protocol setup; the fix is a larger key or a smaller scale, so it
    reports as a configuration error.
    """

    exit_code = 2
