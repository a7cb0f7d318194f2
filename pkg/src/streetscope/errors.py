"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2,
EndpointError -> 4, everything else derived from StreetscopeError -> 3.
"""

from __future__ import annotations


class StreetscopeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(StreetscopeError):
    """Bad arguments, malformed configuration, or violated preconditions."""


class ParseError(StreetscopeError):
    """A document could not be parsed; message carries line/byte position."""


class EmptyNetworkError(StreetscopeError):
    """A road-network document contained zero usable line geometries."""


class DegenerateMatrixError(StreetscopeError):
    """Min-max normalization hit a constant matrix (max == min)."""


class NoSignalError(StreetscopeError):
    """Every clue-label similarity fell below the threshold."""


class SchemaMismatchError(StreetscopeError):
    """A profile and a weight vector disagree on the label schema."""


class UnknownLabelError(StreetscopeError):
    """A label name is not part of the active label schema."""


class CheckpointError(StreetscopeError):
    """An inference checkpoint exists but cannot be read safely."""


class EndpointError(StreetscopeError):
    """A remote endpoint failed after all retries were exhausted."""


class TaggerUnavailableError(StreetscopeError):
    """An entity-tagging backend failed and retries were exhausted."""


class StageError(StreetscopeError):
    """A pipeline stage could not run; message names the missing producer."""
