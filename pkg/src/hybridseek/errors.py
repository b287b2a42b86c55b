"""Exception types shared across the package."""


class HybridseekError(Exception):
    """Base class for all package errors."""


class ConfigError(HybridseekError):
    """A configuration violates a documented invariant.

    The message names the violated condition (e.g. "T_med - T_min > 0").
    """


class InvalidInputError(HybridseekError):
    """An operation received arguments outside its domain."""


class InvalidStartError(HybridseekError):
    """solve() was given an initial point in neither the flow nor jump set."""


class IntegrationDivergedError(HybridseekError):
    """A flow step produced a non-finite value.

    Attributes:
        time: continuous time at which the bad step was detected (or None
            when raised outside a solve loop).
    """

    def __init__(self, message: str = "integration diverged", time: float | None = None):
        super().__init__(message if time is None else f"{message} at t={time:.6g}")
        self.time = time


class OracleUnavailableError(HybridseekError):
    """A test oracle needs data (gradient, minimizer, ...) the cost lacks."""
