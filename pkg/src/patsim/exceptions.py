"""Typed errors raised by the patsim package.

Every domain error derives from PatsimError so callers (and the CLI) can
distinguish expected failures from bugs.
"""

from __future__ import annotations


class PatsimError(Exception):
    """Base class for all domain errors."""


class ParseError(PatsimError):
    """Malformed input file; carries the offending path and line when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(f"{message}{loc}")


class EmptyCorpus(PatsimError):
    """A corpus source contained no notes."""


class InsufficientTitles(PatsimError):
    """Fewer than two distinct segment titles; no title space can be built."""


class UnknownTitle(PatsimError):
    """A prototype title is absent from the title embedding space."""


class DimTooLarge(PatsimError):
    """Requested embedding dimension exceeds what the corpus supports."""


class DimMismatch(PatsimError):
    """Vector or matrix dimensions disagree."""


class BadVector(PatsimError):
    """An imported vector is non-finite or has zero norm."""


class DuplicateKey(PatsimError):
    """The same key appeared twice in an input file."""


class MissingEmbedding(PatsimError):
    """An imported embedding map lacks a required (patient, note) key."""


class TooFewPatients(PatsimError):
    """All-pairs scoring needs at least two patients."""


class FormatError(PatsimError):
    """A binary artifact is truncated, corrupt, or of an unknown version."""


class LengthMismatch(PatsimError):
    """Paired sequences have different lengths."""


class TooShort(PatsimError):
    """A sequence is too short for the requested statistic."""


class DegenerateInput(PatsimError):
    """An operation received an empty or otherwise unusable input."""


class ConfigError(PatsimError):
    """Invalid configuration value or file."""
