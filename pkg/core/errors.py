# core/errors.py
from __future__ import annotations


class DarrError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(DarrError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class SizeError(DarrError, ValueError):
    """A volume or patch is too small or not divisible as required."""


class ShapeError(DarrError, ValueError):
    """Tensor or array shapes disagree with each other or with the config."""


class IntegrityError(DarrError):
    """Labels, permutations or snapshots are inconsistent."""


class ConfigurationError(DarrError):
    """A configuration value (or combination of values) is invalid."""


class NonFiniteLossError(DarrError):
    """A loss became NaN or infinite during optimization."""

    def __init__(self, message: str, iteration: int = -1, dump_path: str | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.dump_path = dump_path
