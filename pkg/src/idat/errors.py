"""Exception hierarchy shared by every subsystem."""


class IdatError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IdatError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(IdatError, ValueError):
    """A configuration value is invalid."""


class UsageError(IdatError, RuntimeError):
    """An API was called in a state that does not allow it."""


class DataError(IdatError, ValueError):
    """Input data violates a contract (label range, zero-norm rows, ...)."""


class NumericError(IdatError, FloatingPointError):
    """A forward computation produced NaN or Inf from finite inputs."""


class LoadError(IdatError, ValueError):
    """A binary file could not be decoded."""


class HeaderError(LoadError):
    pass


class TruncatedError(LoadError):
    pass


class LabelRangeError(LoadError, DataError):
    pass


class VersionError(LoadError):
    pass
