"""Exception types raised across the package."""


class NoisyRCError(Exception):
    """Base class for all package errors."""


class ConfigError(NoisyRCError, ValueError):
    """Invalid parameters or configuration."""


class DimensionError(NoisyRCError, ValueError):
    """Array shapes do not agree."""


class IntegrationDiverged(NoisyRCError, FloatingPointError):
    """A ground-truth integrator produced a non-finite state."""


class DegenerateChannelError(NoisyRCError, ValueError):
    """A channel has zero variance and cannot be z-scored."""


class DegenerateMatrixError(NoisyRCError, ValueError):
    """The recurrent matrix has numerically zero spectral radius."""


class RankDeficientError(NoisyRCError, ArithmeticError):
    """Unregularized readout regression is singular."""


class ReservoirDiverged(NoisyRCError, FloatingPointError):
    """Reservoir state or output became non-finite.

    ``partial`` holds whatever output was produced before divergence.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EmptyEnsembleError(NoisyRCError, ValueError):
    """An aggregate was requested over zero runs."""
