"""Exception hierarchy shared by every ``sbfm`` module."""

from __future__ import annotations

from typing import Optional


class SBFMError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SBFMError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class DimensionError(SBFMError, ValueError):
    """Array shapes or latent partitions do not agree."""


class DomainError(SBFMError, ValueError):
    """A time point lies outside the interval an operation is defined on."""


class DegenerateScoreError(SBFMError):
    """The bridge score was requested for a zero-noise schedule."""


class LayoutError(SBFMError):
    """A flat vector does not match the parameter layout it is paired with."""


class FormatError(SBFMError):
    """A dataset or checkpoint file has a bad header or size."""


class DivergenceError(SBFMError):
    """A state, gradient or loss became non-finite.

    Attributes:
        step: Integration or optimisation step at which it happened.
    """

    def __init__(self, message: str, step: Optional[int] = None) -> None:
        super().__init__(message)
        self.step = step


class NumericError(SBFMError):
    """A network activation became non-finite.

    Attributes:
        layer: Name of the offending layer.
    """

    def __init__(self, message: str, layer: Optional[str] = None) -> None:
        super().__init__(message)
        self.layer = layer
