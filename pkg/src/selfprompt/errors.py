"""Exception hierarchy shared by every selfprompt module."""


class SelfPromptError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SelfPromptError, ValueError):
    """An argument or volume violates a documented invariant."""


class RangeError(ValidationError):
    """An index or parameter falls outside its permitted range."""


class SizeError(ValidationError):
    """An input is too large for the requested operation."""


class FormatError(SelfPromptError):
    """A file does not follow the expected on-disk format."""


class CorruptionError(FormatError):
    """A file has a valid header but an inconsistent payload."""
