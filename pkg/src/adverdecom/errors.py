"""Exception hierarchy shared by all adverdecom modules."""


class AdverdecomError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(AdverdecomError):
    """A file or directory does not follow the expected on-disk format."""


class IntegrityError(AdverdecomError):
    """Payload size or content disagrees with its manifest."""


class ValidationError(AdverdecomError):
    """Data violates an invariant (NaN values, labels out of range, ...)."""


class InsufficientSamplesError(AdverdecomError):
    """A split requests more samples of a class than the cube provides."""


class NumericError(AdverdecomError):
    """A non-finite value appeared during network evaluation or training."""


class TrainingDiverged(NumericError):
    """Training produced a non-finite loss; carries a diagnostic record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
