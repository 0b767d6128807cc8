"""Exception hierarchy shared across the package."""


class SsslError(Exception):
    """Base class for all package errors."""


class UsageError(SsslError):
    """Invalid configuration or arguments; maps to CLI exit code 2."""


class AudioReadError(SsslError):
    """File missing or not a readable RIFF WAV."""


class UnsupportedEncodingError(SsslError):
    """WAV encoding other than 16-bit PCM or 32-bit float."""


class EmptyAudioError(SsslError):
    """Decoded audio contains zero samples."""


class ManifestError(SsslError):
    """Malformed manifest CSV (duplicate ids, bad labels, bad header)."""


class ShapeError(SsslError):
    """Tensor shape does not match the expected layer/model geometry."""


class NonFiniteError(SsslError):
    """NaN or Inf encountered where finite values are required."""
