"""Exception hierarchy.

Configuration problems (bad flags, missing inputs, incompatible artifacts) and
data problems (malformed panels, failed fits) are kept apart so the CLI can map
them to distinct exit codes.
"""

from __future__ import annotations


class SeeRiskError(Exception):
    """Base class for all package errors."""


class ConfigError(SeeRiskError):
    """Invalid configuration, missing input file, or incompatible artifact."""


class DataError(SeeRiskError):
    """Input data violates a precondition of an operation."""


class ParseError(DataError):
    """Text could not be parsed into the expected value."""


class StructuralError(DataError):
    """Shapes or column sets disagree with a fitted specification."""


class FitError(DataError):
    """A model or transform could not be fitted."""


class StageError(SeeRiskError):
    """Failure inside a pipeline stage; ``stage`` names where it happened."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
