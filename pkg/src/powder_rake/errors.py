"""Exception types raised across the package."""


class PowderRakeError(Exception):
    """Base class for all package errors."""


class ConfigError(PowderRakeError, ValueError):
    """Invalid parameters or configuration file."""


class CapacityError(PowderRakeError):
    """Requested particles cannot be placed without overlap."""


class InstabilityError(PowderRakeError, RuntimeError):
    """The explicit integrator blew up (particle speed above the guard)."""


class MeasurementError(PowderRakeError):
    """A post-processing measurement could not be made (e.g. heap too small)."""


class CalibrationError(PowderRakeError):
    """Surface-energy calibration bracket is invalid."""
