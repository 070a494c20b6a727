"""Shared exception hierarchy.

Every domain error raised by this package derives from AstraError so
callers (and the CLI) can separate expected failures from bugs.
"""


class AstraError(Exception):
    """Base class for all domain errors raised by astra_nav."""


class MapError(AstraError):
    """Structural problem in a topological-semantic map or its file."""


class GeometryMismatchError(AstraError):
    """Two grids that must share shape/resolution/origin do not."""


class UnknownConfigKeyError(AstraError):
    """A configuration mapping contained a key nobody recognizes."""

    def __init__(self, key: str, where: str = "config"):
        super().__init__(f"unknown {where} key: {key!r}")
        self.key = key
