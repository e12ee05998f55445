"""Exception types raised across the package."""


class SoftMCLError(Exception):
    """Base class for all package errors."""


class ShapeError(SoftMCLError, ValueError):
    pass


class NumericalError(SoftMCLError, ArithmeticError):
    """A computation produced NaN or Inf from finite inputs."""


class LexiconFormatError(SoftMCLError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class EmptyLexiconError(SoftMCLError, ValueError):
    pass


class CorpusFormatError(SoftMCLError, ValueError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValenceRangeError(SoftMCLError, ValueError):
    pass


class MaskedValenceError(SoftMCLError, ValueError):
    """A sentinel (0) valence reached a computation that needs a real rating."""


class VocabularyError(SoftMCLError, ValueError):
    pass


class EncoderInputError(SoftMCLError, ValueError):
    pass


class DegenerateBatchError(SoftMCLError, ValueError):
    pass


class ParameterError(SoftMCLError, ValueError):
    pass


class GradCheckError(SoftMCLError):
    pass


class CheckpointFormatError(SoftMCLError, ValueError):
    pass


class ConfigError(SoftMCLError, ValueError):
    pass
