class LabError(Exception):
    """
    Base class for every error raised by the laboratory
    """


class InvalidInputError(LabError, ValueError):
    """
    Input data is malformed: non-finite entries, zero-norm rows, too few samples
    """


class ShapeError(LabError, ValueError):
    """
    Matrix dimensions do not line up
    """


class InvalidParameterError(LabError, ValueError):
    """
    A scalar parameter is outside its valid range
    """


class DegenerateSpectrumError(LabError, ValueError):
    """
    A spectrum has no positive mass
    """


class InvalidMatrixError(LabError, ValueError):
    """
    A matrix violates symmetry, unit diagonal or positive semi-definiteness
    """


class SingularModelError(LabError, ArithmeticError):
    """
    A Gaussian closed form hit a singular covariance, usually a deterministic R to Z map
    """


class DegenerateBatchError(LabError, ValueError):
    """
    A loss was asked for a batch too small to define it
    """


class TrainingDivergenceError(LabError, ArithmeticError):
    def __init__(self, message: str, last_good_epoch: int | None):
        """
        Initialize with the last epoch whose state was finite, None when the caller does not track epochs
        """
        super().__init__(message if last_good_epoch is None else f"{message} (last good epoch: {last_good_epoch})")
        self.message = message
        self.last_good_epoch = last_good_epoch


class ConfigParseError(LabError, ValueError):
    def __init__(self, key: str, message: str):
        """
        Initialize with the dotted path of the offending key
        """
        super().__init__(f"{key}: {message}")
        self.key = key


class ExperimentError(LabError):
    def __init__(self, command: str, cause: Exception):
        """
        Wrap a domain error with the experiment it happened in
        """
        super().__init__(f"Experiment '{command}' failed: {type(cause).__name__}: {cause}")
        self.command = command
        self.cause = cause
