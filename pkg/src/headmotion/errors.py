"""Exception hierarchy shared by all headmotion modules.

Every rejection carries a short machine-readable ``reason`` code next to the
human-readable message, so callers (and the CLI exit-code mapping) can react
without parsing strings.
"""

from __future__ import annotations


class HeadMotionError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


class FormatError(HeadMotionError):
    """Malformed or inconsistent input data: file parsing, schema, integrity."""


class DomainError(HeadMotionError):
    """Input is well-formed but outside the operation's domain."""


class ConfigError(HeadMotionError):
    """Invalid or inconsistent configuration."""
