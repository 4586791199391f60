"""Exception types shared across the package."""


class UwbAllocError(Exception):
    """Base class for all package errors."""


class UnknownMode(UwbAllocError, KeyError):
    """Requested data rate is not one of the WiMedia MCS rows."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown MCS mode"


class EmptyInput(UwbAllocError, ValueError):
    pass


class NonPositiveLambda(UwbAllocError, ValueError):
    pass


class RateOutOfTable(UwbAllocError, ValueError):
    pass


class ZeroNoise(UwbAllocError, ValueError):
    """Noise plus interference is zero on at least one subcarrier."""


class Infeasible(UwbAllocError, ValueError):
    pass


class ConfigError(UwbAllocError, ValueError):
    """Invalid or unknown scenario configuration."""
