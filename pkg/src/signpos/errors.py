"""Exception types raised across the package."""


class SignPosError(Exception):
    """Base class for all package errors."""


class NonConvergence(SignPosError):
    pass


class BehindCamera(SignPosError):
    pass


class InvalidPerturbation(SignPosError):
    pass


class InvalidCalibration(SignPosError, ValueError):
    pass


class DegenerateGeometry(SignPosError):
    """Point sets are coincident or collinear, so no unique similarity exists."""


class DegenerateRays(SignPosError):
    pass


class NoTurns(SignPosError):
    """The trajectory has no interior turn points after simplification."""


class NoMatches(SignPosError):
    pass


class EmptyScene(SignPosError):
    pass


class ValidationError(SignPosError, ValueError):
    """Input file is malformed or inconsistent with the other inputs."""
