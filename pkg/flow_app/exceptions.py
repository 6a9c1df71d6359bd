'''
Exceptions raised by the flow_app library.

Each family maps onto the exit code the management commands return:
1 for configuration problems, 2 for bad input data and 3 for numerical
failures.
'''

EXIT_CONFIGURATION = 1
EXIT_DATA = 2
EXIT_NUMERICS = 3


class SurfaceFlowException(Exception):
    exit_code = EXIT_CONFIGURATION

    def __init__(self, message, grid_index=None):
        if grid_index is not None:
            grid_index = tuple(int(x) for x in grid_index)
            message = '%s (grid index %s)' % (message, grid_index)
        super().__init__(message)
        self.grid_index = grid_index


class ConfigurationException(SurfaceFlowException):
    exit_code = EXIT_CONFIGURATION


class DataException(SurfaceFlowException):
    exit_code = EXIT_DATA


class NumericsException(SurfaceFlowException):
    exit_code = EXIT_NUMERICS


class InvalidSpecException(ConfigurationException):
    pass

class InvalidConfigException(ConfigurationException):
    pass

class InconsistentPeriodicityException(ConfigurationException):
    pass


class FormatException(DataException):
    pass

class ShapeMismatchException(DataException):
    pass

class GridTooSmallException(DataException):
    pass


class DegenerateMetricException(NumericsException):
    pass

class BreakdownException(NumericsException):
    pass

class BoundaryViolationException(NumericsException):
    pass

class CFLExceededException(NumericsException):
    pass
