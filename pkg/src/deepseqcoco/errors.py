"""Exception hierarchy shared by every module of the engine."""


class DeepSeqCocoError(Exception):
    pass


class ShapeError(DeepSeqCocoError, ValueError):
    """Raised when tensor extents are incompatible with an operation."""


class NumericError(DeepSeqCocoError, ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class UsageError(DeepSeqCocoError):
    pass


class SpecError(DeepSeqCocoError, ValueError):
    """Invalid network, schedule or run specification."""


class DataError(DeepSeqCocoError, ValueError):
    pass


class DecodeError(DataError):
    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class CheckpointError(DeepSeqCocoError):
    pass


class ConfigError(DeepSeqCocoError):
    pass


class DegenerateStatisticsError(NumericError):
    """Batch statistics requested over a single element."""
