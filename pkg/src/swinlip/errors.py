"""Exception hierarchy shared by every layer of the package."""


class SwinLipError(Exception):
    pass


class DimensionError(SwinLipError, ValueError):
    """Operand shapes do not conform."""


class ConfigError(SwinLipError, ValueError):
    """A model or layer configuration cannot be realised.

    ``line`` is set when the error was raised while parsing a config file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TapeError(SwinLipError, RuntimeError):
    pass


class NondeterminismError(SwinLipError, RuntimeError):
    pass


class WeightFileError(SwinLipError, IOError):
    pass


class MagicError(WeightFileError):
    pass


class VersionError(WeightFileError):
    pass


class ConfigHashError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass
