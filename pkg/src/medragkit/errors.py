"""Exception hierarchy shared by all pipeline stages.

Three broad failure families map onto the CLI exit-code contract:
usage/config problems (exit 1), data problems (exit 2), and provider
problems (exit 3).
"""

from __future__ import annotations


class MedragError(Exception):
    """Base class for all package errors."""


class ConfigError(MedragError):
    """Invalid run configuration or command usage."""


class DataError(MedragError):
    """Malformed input data: bad files, invalid records, schema violations."""


class ManifestError(DataError):
    """Manifest construction produced an unusable result."""


class ProviderError(MedragError):
    """An LLM or embedding provider call failed."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class RateLimitedError(ProviderError):
    """Provider signalled a rate limit (always retryable)."""

    def __init__(self, message: str = "rate limited"):
        super().__init__(message, retryable=True)


class AuthError(ProviderError):
    """Authentication failure (never retried)."""

    def __init__(self, message: str = "authentication failure"):
        super().__init__(message, retryable=False)


class MockScriptError(ProviderError):
    """A mock provider received a request its script does not cover."""

    def __init__(self, message: str):
        super().__init__(message, retryable=False)


class ResponseFormatError(ProviderError):
    """A provider reply did not follow the requested output format."""

    def __init__(self, message: str):
        super().__init__(message, retryable=False)


class IsolationError(MedragError):
    """A judge prompt violated the gold-answer isolation contract."""
