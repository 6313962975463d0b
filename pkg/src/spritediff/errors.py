"""Exception categories shared across the package."""

from .numeric import ContractError, InvalidValueError, ShapeError


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, truncated or inconsistent."""


__all__ = ["CheckpointError", "ConfigError", "ContractError", "InvalidValueError", "ShapeError"]
