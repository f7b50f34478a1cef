"""Exception types shared across the package."""


class ScopfkitError(Exception):
    """Base class for all package errors."""


class CaseFormatError(ScopfkitError):
    """A case or contingency file violates the supported format."""


class GridModelError(ScopfkitError):
    """Inconsistent network data or an invalid contingency reference."""


class IslandingError(GridModelError):
    """A contingency disconnects buses that carry injections."""


class CurveDomainError(ScopfkitError):
    """A sigmoid or smooth-curve argument left the open interval (-1, 1)."""


class PowerFlowError(ScopfkitError):
    """Newton power flow failed to converge or hit a switching cycle."""


class SolverError(ScopfkitError):
    """Interior-point solve failed; carries the last iterate when known."""

    def __init__(self, message, iterate=None, stats=None):
        super().__init__(message)
        self.iterate = iterate
        self.stats = stats
