"""Exception types shared across the package."""


class SampleFusionError(Exception):
    """Base class for all package errors."""


class InvalidLabelError(SampleFusionError, ValueError):
    pass


class DimensionError(SampleFusionError, ValueError):
    pass


class NumericError(SampleFusionError, ArithmeticError):
    pass


class InfeasibleBasisError(SampleFusionError, ValueError):
    pass


class ConfigError(SampleFusionError, ValueError):
    pass


class FormatError(SampleFusionError, ValueError):
    """Malformed IDX or label file (bad magic, bad header)."""


class TruncatedFileError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class LabelFileError(SampleFusionError, ValueError):
    """Problem in an annotator label CSV; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelRangeError(LabelFileError):
    pass


class DuplicateEntryError(LabelFileError):
    pass


class MissingEntryError(LabelFileError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
