"""Exception types shared across the package."""


class GridError(ValueError):
    """A state or packet does not fit the grid it is placed on."""


class ConfigError(ValueError):
    """Invalid experiment or numerical configuration."""


class BoundaryMassError(RuntimeError):
    """Wavefunction mass reached the edge of the periodic box.

    ``diagnostics`` carries the time and boundary mass at abort.
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class LimitedAngleError(ValueError):
    """Raised when tomographic data does not cover a full angular range."""


class PartialFailureError(RuntimeError):
    """Too many flagged samples to proceed with a reconstruction."""

    def __init__(self, message, valid_fraction):
        super().__init__(message)
        self.valid_fraction = valid_fraction
