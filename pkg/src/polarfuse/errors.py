"""Exception types shared across the package."""


class PolarfuseError(Exception):
    """Base class for all package-specific errors."""


class InputError(PolarfuseError):
    """Malformed or inconsistent input data, files, or configuration."""


class GimbalLockError(PolarfuseError):
    """Heading is unobservable because pitch is at +/- pi/2."""


class SolverError(PolarfuseError):
    """The normal equations are indefinite (typically an unfixed gauge)."""
