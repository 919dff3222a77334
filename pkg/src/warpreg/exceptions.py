"""Exception types shared across the package."""


class DegeneracyError(RuntimeError):
    """A computation hit a rank-deficient, non-positive-definite or
    otherwise degenerate object (insufficient data, singular covariance)."""


class ModeSearchError(RuntimeError):
    """A posterior mode search did not reach the gradient tolerance.

    The best iterate found is attached as ``best`` so callers can decide
    whether to salvage it.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best
