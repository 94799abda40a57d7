"""Exception hierarchy shared by every module."""


class UasepError(Exception):
    """Base class for all errors raised by the package."""


class ParameterError(UasepError, ValueError):
    """An argument violates a documented bound or shape contract."""


class FormatError(UasepError):
    """A file or byte stream could not be decoded."""


class ConfigurationError(UasepError):
    """Incompatible settings, e.g. a checkpoint that does not match the STFT."""


class DegenerateInputError(UasepError, ValueError):
    """Input has too little structure for the requested operation."""


class UndefinedMetricError(UasepError, ValueError):
    """A metric is undefined for the given operands (e.g. silent reference)."""


class TrainingDivergedError(UasepError, ArithmeticError):
    """The training loss became NaN or infinite."""
