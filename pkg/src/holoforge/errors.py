"""Exception types shared across holoforge."""


class HoloforgeError(Exception):
    """Base class for all holoforge errors."""


class DimensionError(HoloforgeError, ValueError):
    """A physical length (wavelength, pitch, distance) is non-positive or malformed."""


class ShapeError(HoloforgeError, ValueError):
    """Array or grid shapes are inconsistent."""


class DomainError(HoloforgeError, ValueError):
    """An argument lies outside the mathematical domain of the function."""


class GraphError(HoloforgeError, RuntimeError):
    """Backward was requested on a tensor that is not recorded on a live tape."""


class DivergenceError(HoloforgeError, ArithmeticError):
    """An optimization or training loss became non-finite."""


class ConfigError(HoloforgeError, ValueError):
    """A configuration file or value is invalid."""
