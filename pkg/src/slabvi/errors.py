"""Semantic exception hierarchy shared across the package."""


class SlabVIError(Exception):
    """Base class for all package-specific errors."""


class DegenerateMixtureError(SlabVIError):
    """Spike weight is 0 or 1, so the two-component natural form does not exist."""


class OverlappingSupportError(SlabVIError):
    """Two mixture components claim the same support point."""


class AbsoluteContinuityError(SlabVIError):
    """A KL divergence (and hence the ELBO) is undefined for the given pair."""


class NumericalDivergenceError(SlabVIError):
    """A fit produced non-finite values or violated an internal consistency bound.

    ``location`` identifies the offending coordinate (or ``(p, k)`` cell).
    """

    def __init__(self, message, location=None):
        super().__init__(message if location is None
                         else f"{message} (at {location})")
        self.location = location


class RankDeficientError(SlabVIError):
    """The data matrix has numerical rank below the requested number of components."""


class SingularMatrixError(SlabVIError):
    """A linear solve failed because the matrix is singular."""


class CorrelationUndefinedError(SlabVIError):
    """Pearson correlation is undefined because one input has zero variance."""


class InputFormatError(SlabVIError):
    """A user-supplied file or configuration value could not be interpreted."""
