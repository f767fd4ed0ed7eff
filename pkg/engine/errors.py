"""Exception hierarchy shared by the engine, the fitters and the CLI.

Every error carries the process exit code the CLI should return: 1 for
usage, configuration and data problems, 2 for numerical failures.
"""


class MeasurementErrorModelError(Exception):
    exit_code = 1


class ConfigError(MeasurementErrorModelError):
    pass


class DataError(MeasurementErrorModelError):
    pass


class ModelSpecError(MeasurementErrorModelError):
    pass


class UnsupportedModelError(MeasurementErrorModelError):
    pass


class InvalidParameterError(MeasurementErrorModelError, ValueError):
    pass


class NumericalError(MeasurementErrorModelError):
    exit_code = 2


class NewtonConvergenceError(NumericalError):
    pass


class NotPositiveDefiniteError(NumericalError):
    pass


class IRLSDivergenceError(NumericalError):
    pass


class RankDeficiencyError(NumericalError):
    pass


class GridSearchError(NumericalError):
    pass


class ElicitationError(NumericalError):
    pass
