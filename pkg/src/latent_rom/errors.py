"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class LatentROMError(Exception):
    exit_code = 1


class ShapeError(LatentROMError, ValueError):
    exit_code = 2


class ConfigError(LatentROMError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    pass


class StateError(LatentROMError, RuntimeError):
    exit_code = 1


class NumericError(LatentROMError, ArithmeticError):
    exit_code = 3


class NotPositiveDefiniteError(NumericError):
    pass


class SingularityError(NumericError):
    pass


class DegenerateDataError(NumericError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, step=None, epoch=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch


class UndefinedMetricError(NumericError):
    pass


class AcquisitionError(LatentROMError, RuntimeError):
    # raised when the FOM fails at the chosen point, a numeric failure
    exit_code = 3


class StorageError(LatentROMError, OSError):
    exit_code = 4
