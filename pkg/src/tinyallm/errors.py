"""Exception types shared across the package.

Plain ``ValueError`` / ``KeyError`` cover bad arguments and lookups; the
classes here exist where callers need to distinguish failure kinds (the
CLI maps them onto exit codes).
"""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Requested configuration cannot be satisfied (sizes, constraints, paths)."""


class DataError(RuntimeError):
    """Inputs reference missing or inconsistent data (e.g. unresolvable clips)."""


class NumericalError(RuntimeError):
    """Non-finite values encountered where finite math was required."""


class UnknownClassError(KeyError):
    """Event-class id not present in the ontology."""


class InsufficientNegativesError(ValueError):
    """Fewer absent event classes available than requested; never clamped silently."""


class GenerationError(RuntimeError):
    """A response generator failed; carries the prompt so the call can be retried."""

    def __init__(self, message: str, prompt: str | None = None) -> None:
        super().__init__(message)
        self.prompt = prompt


class EmptyResponseError(GenerationError):
    """A response generator returned an empty completion."""
