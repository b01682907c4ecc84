"""Exception hierarchy shared across the package."""


class LWSError(Exception):
    pass


class DimensionError(LWSError, ValueError):
    """Tensor shapes do not compose."""


class ArgumentError(LWSError, ValueError):
    pass


class DomainError(LWSError, ValueError):
    """A value lies outside the domain of a mathematical map (e.g. log of zero)."""


class StateError(LWSError, RuntimeError):
    pass


class ConfigError(LWSError, ValueError):
    pass


class SpecError(ConfigError):
    """An architecture whose layer shapes do not chain."""


class DataError(LWSError, ValueError):
    pass


class FormatError(DataError):
    pass


class ConsistencyError(DataError):
    pass


class ReportError(LWSError, RuntimeError):
    pass
