"""Exception types shared across the package."""


class OnhError(Exception):
    """Base class for all package errors."""


class DimensionError(OnhError, ValueError):
    pass


class ContractError(OnhError, ValueError):
    pass


class NumericError(OnhError, ArithmeticError):
    pass


class InputError(OnhError, ValueError):
    pass


class ExtractionError(OnhError):
    pass


class FitError(OnhError):
    pass


class GenerationError(OnhError):
    pass


class SplitError(OnhError):
    pass


class MetricError(OnhError, ValueError):
    pass


class ModelError(OnhError):
    pass


class ConfigError(OnhError, ValueError):
    pass


class ExperimentError(OnhError):
    pass
