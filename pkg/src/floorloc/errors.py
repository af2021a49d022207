"""Exception hierarchy.

Every error raised by the package derives from :class:`FloorlocError`, so the
CLI can map any of them to exit code 1 without catching unrelated bugs.
"""


class FloorlocError(Exception):
    """Base class for all package errors."""


class MalformedFile(FloorlocError, ValueError):
    pass


class InconsistentDims(FloorlocError, ValueError):
    pass


class ZeroArea(FloorlocError, ValueError):
    pass


class OriginOccupied(FloorlocError, ValueError):
    pass


class OriginOutside(FloorlocError, ValueError):
    pass


class DegenerateTilt(FloorlocError, ValueError):
    pass


class EmptyFreeSpace(FloorlocError, ValueError):
    pass


class LengthMismatch(FloorlocError, ValueError):
    pass


class AllZeroPosterior(FloorlocError, RuntimeError):
    """Observation has zero likelihood everywhere the prior has mass."""


class StuckTrajectory(FloorlocError, RuntimeError):
    pass


class TooShort(FloorlocError, ValueError):
    pass


class ConfigError(FloorlocError, ValueError):
    """Invalid benchmark/run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
