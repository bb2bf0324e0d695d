"""Exception types raised across the package."""


class OptoheatError(Exception):
    """Base class for all package errors."""


class TruncationError(OptoheatError, ValueError):
    """A Fock-space truncation leaks more population than the budget allows."""

    def __init__(self, message, required_dim=None):
        super().__init__(message)
        self.required_dim = required_dim


class SteadyStateError(OptoheatError, ValueError):
    """The optical mode has no thermal steady state (population inversion)."""


class BathRangeError(OptoheatError, ValueError):
    """A tabulated spectrum was queried outside its sampled range."""


class NumericalError(OptoheatError, RuntimeError):
    """An integrator or root finder failed to reach its tolerance."""


class FitError(OptoheatError, ValueError):
    """A drift/diffusion fit was ill-conditioned."""


class ConfigError(OptoheatError, ValueError):
    """Invalid scenario configuration. ``key`` holds the dotted key path."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class RegimeError(OptoheatError, RuntimeError):
    """A linear-regime margin is below threshold in strict mode."""
