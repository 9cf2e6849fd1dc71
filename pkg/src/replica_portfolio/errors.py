"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the model is defined."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    ``residuals`` carries the last residual vector (or report) so callers can
    inspect how far from convergence the iteration ended.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DivergenceError(ConvergenceError):
    """The iterate norm exceeded the divergence guard."""


class CampaignError(RuntimeError):
    """A campaign could not produce an average at some grid point."""
