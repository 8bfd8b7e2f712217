"""Exception types shared across the package."""


class DualcoderError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(DualcoderError, ValueError):
    """Unsupported or corrupt file contents."""


class EmptyAudioError(DualcoderError, ValueError):
    pass


class TooShortError(DualcoderError, ValueError):
    """Audio shorter than a single analysis frame."""


class ShapeError(DualcoderError, ValueError):
    pass


class StateError(DualcoderError, RuntimeError):
    """Operation called out of order (e.g. backward before forward)."""


class ParseError(DualcoderError, ValueError):
    """Malformed text input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(DualcoderError, RuntimeError):
    pass
