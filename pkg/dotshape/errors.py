"""Exceptions raised by dotshape."""

from __future__ import annotations


class DotShapeError(Exception):
    """Base class for all dotshape errors."""


class ConfigError(DotShapeError):
    """Configuration could not be parsed or validated."""

    def __init__(self, message: str, paths: list[str] | None = None) -> None:
        """Initialize with the offending field paths."""
        super().__init__(message)
        self.paths: list[str] = paths or []


class GeometryError(DotShapeError, ValueError):
    """Invalid grid, quadrature, phantom or receiver geometry."""


class NumericalError(DotShapeError):
    """A solver or inversion step cannot proceed."""


class CflError(NumericalError):
    """Time step violates the advection stability bound."""


class MismatchError(NumericalError):
    """Inputs were built on incompatible discretisations."""
