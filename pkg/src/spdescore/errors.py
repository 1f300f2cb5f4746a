"""Exception and warning types raised across the package."""


class InvalidParameterError(ValueError):
    pass


class TraceClassError(InvalidParameterError):
    """Covariance family whose trace would diverge as the truncation grows."""


class NotPSDError(ValueError):
    pass


class AsymmetryError(ValueError):
    pass


class DimensionError(ValueError):
    pass


class HorizonError(ValueError):
    pass


class OutOfRangeWarning(UserWarning):
    """Direction has a material component outside the range of gamma."""


class OutOfSupportWarning(UserWarning):
    pass


class StabilityWarning(UserWarning):
    pass
