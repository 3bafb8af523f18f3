"""Exception hierarchy.

Input errors map to CLI exit status 2, configuration errors to 3.
"""


class BoscwatchError(Exception):
    exit_status = 2


class InputError(BoscwatchError):
    exit_status = 2


class ConfigError(BoscwatchError):
    exit_status = 3


class FileUnavailable(InputError):
    pass


class StreamClosed(BoscwatchError):
    pass


class EmptyTrace(InputError):
    pass


class FormatError(InputError):
    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.lineno = lineno


class MarkerOrderError(InputError):
    """Attack markers do not alternate start/end."""


class IndexOutOfRange(ValueError, BoscwatchError):
    pass


class LengthMismatch(ValueError, BoscwatchError):
    pass


class VectorLenMismatch(ValueError, BoscwatchError):
    pass


class InsufficientTrainingData(ConfigError):
    pass


class MarkerInTraining(ConfigError):
    pass


class UndefinedMetric(ArithmeticError, BoscwatchError):
    pass


class OverlappingAttacks(ConfigError):
    pass


class SpanOutOfRange(ConfigError):
    pass


class SourceClosed(InputError):
    pass


class TasksFileMissing(InputError):
    pass


class EmptyTaskList(InputError):
    pass


class TracerSpawnFailure(BoscwatchError):
    exit_status = 2

    def __init__(self, message, command=None):
        super().__init__(message if command is None else f"{message}: {command!r}")
        self.command = command


class SessionExists(ConfigError):
    pass
