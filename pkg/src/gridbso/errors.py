"""Exception types shared by the filters and samplers."""


class GridBsoError(Exception):
    """Base class for all library errors."""


class Divergence(GridBsoError):
    """A filter lost all consistent probability mass.

    ``step`` is filled in by the filter that detected it, when known.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

    def __str__(self):
        msg = super().__str__()
        if self.step is not None:
            return f"{msg} (step {self.step})"
        return msg


class DegenerateDensity(Divergence):
    """A gridded density has (numerically) zero mass."""


class DegenerateWeights(Divergence):
    """All particle weights vanished."""


class NonInvertible(GridBsoError):
    """The noise-inverting map of a model has no solution at the given arguments."""


class InvalidInit(GridBsoError):
    """A Markov chain could not be started inside the support of its target."""


class DegenerateSamples(GridBsoError):
    """Samples have zero spread in some dimension, so no bandwidth can be derived."""


class SingularInnovation(GridBsoError):
    """The EKF innovation covariance cannot be inverted."""
