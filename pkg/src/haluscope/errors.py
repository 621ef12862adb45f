"""Shared exception types. Each maps to a CLI exit code family."""

from __future__ import annotations


class HaluscopeError(Exception):
    """Base class for all harness errors."""


class ConfigError(HaluscopeError):
    """Bad configuration or usage: unknown placeholder, invalid threshold,
    missing auth variable, contradictory flags. CLI exit code 1."""


class TemplateError(ConfigError):
    """Prompt template refers to an unknown or malformed placeholder."""


class IngestionError(HaluscopeError):
    """A data file could not be parsed. Carries the offending line number.
    CLI exit code 2."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(prefix + message)


class ValidationError(HaluscopeError):
    """A loaded value violates a domain invariant. CLI exit code 2."""


class ProviderError(HaluscopeError):
    """Completion provider failed after exhausting retries. Carries the last
    HTTP status when one was observed. CLI exit code 3."""

    def __init__(self, message: str, *, status: int | None = None):
        self.status = status
        super().__init__(message)


class ReportError(HaluscopeError):
    """Report computation is impossible (empty benchmark, missing
    subcategory cells). CLI exit code 2."""


class HarnessFault(HaluscopeError):
    """Harness-side fault unrelated to the program under test. CLI exit
    code 3."""
