"""Exception hierarchy shared across the package."""


class GresError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(GresError, ValueError):
    pass


class ContractError(GresError, ValueError):
    pass


class InputError(GresError, ValueError):
    pass


class ConfigError(GresError, ValueError):
    pass


class GenerationError(GresError, RuntimeError):
    pass


class SkipSignal(GresError):
    """A scene cannot support the requested expression kind; resample."""


class CompatibilityError(GresError, ValueError):
    pass


class NumericalError(GresError, ArithmeticError):
    pass


class UndefinedMetricError(GresError, ValueError):
    pass
