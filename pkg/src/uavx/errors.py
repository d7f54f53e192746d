"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad file, bad value, or impossible geometry."""


class ShapeError(ValueError):
    """Array or network dimension mismatch."""


class NumericError(RuntimeError):
    """Non-finite value encountered where training cannot continue."""


class InsufficientData(RuntimeError):
    """Not enough stored samples to draw the requested batch."""
