"""Exception hierarchy shared across the package."""


class ContrecError(Exception):
    """Base class; the CLI maps subclasses to a category name and exit code."""

    category = "error"


class ConfigError(ContrecError, ValueError):
    category = "config"


class ShapeError(ContrecError, ValueError):
    category = "shape"


class UsageError(ContrecError, ValueError):
    category = "usage"


class ProtocolError(ContrecError, ValueError):
    category = "protocol"


class ScheduleError(ProtocolError):
    category = "schedule"


class NumericalError(ContrecError, ArithmeticError):
    category = "numerical"


class FeatureFileError(ContrecError):
    """Problem reading a feature or checkpoint file. ``line`` is 1-based."""

    category = "parse"

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MalformedHeaderError(FeatureFileError):
    pass


class RowArityError(FeatureFileError):
    pass


class ValueParseError(FeatureFileError):
    pass


class ClassRangeError(FeatureFileError):
    pass


class InconsistentMappingError(FeatureFileError):
    pass
