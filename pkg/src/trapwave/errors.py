"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`TrapwaveError`,
so callers (the CLI in particular) can tell numerical failures apart from bugs.
"""


class TrapwaveError(Exception):
    """Base class for all package errors."""


class ConfigError(TrapwaveError, ValueError):
    """Invalid user-facing parameters."""


# geometry / mesh
class GeometryError(TrapwaveError, ValueError):
    pass


class OverlappingChannels(GeometryError):
    pass


class OpenBoundary(GeometryError):
    pass


class HoleOutsideDomain(GeometryError):
    pass


class RTooSmall(GeometryError):
    pass


class MeshFailure(TrapwaveError):
    pass


# modes
class GammaTooLarge(TrapwaveError):
    pass


# linear algebra
class ZetaNonPositive(TrapwaveError, ValueError):
    pass


class SingularSystem(TrapwaveError):
    pass


class CutNotMeshAligned(TrapwaveError):
    pass


# scattering
class TraceCountMismatch(TrapwaveError, ValueError):
    pass


class EigendecompositionFailure(TrapwaveError):
    pass


class IllConditionedCminus(TrapwaveError):
    """The incoming block of the coefficient matrix is (numerically) singular."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class NoEvanescentModes(TrapwaveError):
    pass


class NoMinimumInBracket(TrapwaveError):
    pass


class PropagatingLeak(TrapwaveError):
    pass
