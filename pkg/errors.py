"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.
"""


class LabError(Exception):
    """
    Base class for all lab errors.
    """


class InvalidDimensionError(LabError, ValueError):
    """
    Raised when a dimension is zero, negative or otherwise unusable.
    """


class DimensionMismatchError(LabError, ValueError):
    """
    Raised when two arrays that must share a dimension do not.
    """


class DegenerateProjectionError(LabError):
    """
    Raised when asked to normalise a (numerically) zero vector.
    """


class DegenerateAngleError(LabError):
    """
    Raised when an angle is requested against a zero vector.
    """


class DomainError(LabError, ValueError):
    """
    Raised when a scalar argument lies outside the function's domain.
    """


class EmptyBatchError(LabError, ValueError):
    """
    Raised when a mini-batch or dataset holds no samples.
    """


class ScheduleError(LabError, ValueError):
    """
    Raised for malformed annealing schedules or optimizer settings.
    """


class ConfigError(LabError):
    """
    Raised for unknown keys, bad values or missing referenced files in an
    experiment configuration.
    """


class LabIOError(LabError):
    """
    Wraps file-system failures, always carrying the offending path.
    """

    def __init__(self, path, reason):
        super().__init__(str(reason) + " (path: " + str(path) + ")")
        self.path = str(path)
        self.reason = reason
