"""Exception types shared across the package."""

from __future__ import annotations


class InvalidSpecError(ValueError):
    """A construction or sampling spec violates its own constraints."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GridAlignmentError(RuntimeError):
    """Internal bug guard: a clock image is missing from the market grid."""


class CausalityError(ValueError):
    """A strategy evaluator read information from the future."""


class AdaptednessError(ValueError):
    """A market-time integrand varies across a clock-jump image interval."""


class InadmissibleError(RuntimeError):
    """Too many simulated paths produced negative wealth."""


class ConfigError(ValueError):
    """A run configuration failed to parse or validate."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
