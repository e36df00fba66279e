"""Shared exception types."""


class PromptLensError(Exception):
    """Base class for all promptlens errors."""


class ConfigurationError(PromptLensError):
    """Invalid configuration: bad config keys, missing credentials, or a
    request the server rejected as malformed (HTTP 4xx). Never retried."""


class ProviderError(PromptLensError):
    """Unrecoverable provider failure, surfaced after retries."""


class TransportError(ProviderError):
    """Network-level failure (connection, timeout, 5xx, rate limit)."""
