"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps the three top-level families onto exit codes: ``ConfigError``
(2), ``DataError`` (3) and ``Unattainable`` (4, strict mode only).
"""

from __future__ import annotations


class PhalanxFusionError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PhalanxFusionError, ValueError):
    """Invalid run, synthesis, matcher or weight configuration."""


class DataError(PhalanxFusionError, ValueError):
    """Malformed or inconsistent input data."""


# -- template codec ----------------------------------------------------------


class TemplateError(DataError):
    """A template buffer could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(TemplateError):
    pass


class TruncatedBuffer(TemplateError):
    pass


class LengthMismatch(TemplateError):
    pass


class FieldOutOfRange(TemplateError):
    pass


class InvariantViolation(DataError):
    """A template object cannot be represented in the binary profile."""


# -- matcher ------------------------------------------------------------------


class EmptyTemplate(DataError):
    pass


# -- dataset protocol -----------------------------------------------------------


class ParseError(DataError):
    pass


class DuplicateEntry(DataError):
    pass


class RangeError(DataError):
    pass


class SchemaError(DataError):
    pass


class MissingTemplate(DataError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


# -- fusion ---------------------------------------------------------------------


class MissingStaticWeight(ConfigError):
    pass


class IncompleteChannel(DataError):
    pass


class ZeroWeightSum(DataError):
    pass


# -- evaluation -----------------------------------------------------------------


class EmptyScoreList(DataError):
    pass


class EmptySamples(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class Unattainable(PhalanxFusionError):
    """No observed threshold reaches the requested false accept rate."""

    def __init__(self, far_target: float, n_imposter: int):
        super().__init__(
            f"FAR <= {far_target:g} is not attainable with {n_imposter} imposter scores"
        )
        self.far_target = far_target
        self.n_imposter = n_imposter
