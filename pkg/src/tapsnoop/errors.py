"""Exception hierarchy shared across the toolkit.

ConfigError and DataError map to distinct CLI exit codes (2 and 3); the
more specific subclasses exist where callers need to tell failure modes
apart programmatically.
"""


class TapsnoopError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TapsnoopError):
    """Invalid configuration: bad JSON document, bad field, bad flag."""


class DataError(TapsnoopError):
    """Input data violates a precondition or an invariant."""


class UnsupportedEncodingError(DataError):
    """Audio file exists but is not a supported PCM encoding."""


class EmptyAudioError(DataError):
    """Audio file decodes to zero frames."""


class LabelFormatError(DataError):
    """Tap-label CSV is malformed; the message names the offending row."""


class MissingChannelError(DataError):
    """An operation needs a microphone channel the recording lacks."""


class NoSignalError(DataError):
    """Delay estimation got an all-zero signal after prefiltering."""


class DegenerateTemplateError(DataError):
    """Feedback events cancel out; no usable template can be built."""


class InvariantError(TapsnoopError):
    """An internal consistency check failed (CLI exit code 4)."""
