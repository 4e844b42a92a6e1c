"""Exception hierarchy."""


class BpreError(Exception):
    """Base class for all package errors."""


class InvalidLaw(BpreError, ValueError):
    pass


class InvalidModel(BpreError, ValueError):
    pass


class DivergentSeries(BpreError, ArithmeticError):
    """A generating-function argument lies outside the radius of convergence."""


class PopulationOverflow(BpreError, OverflowError):
    """A generation would exceed the population cap.

    The partially simulated state travels with the exception so callers can
    inspect how far the run got.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateEnvironment(BpreError, ValueError):
    """Zero variance series: every law in range is a point mass."""


class DivergenceSuspected(BpreError, ArithmeticError):
    pass


class HypothesisViolation(BpreError, ValueError):
    """A model does not meet the assumptions a campaign relies on."""


class CampaignInvalid(BpreError, RuntimeError):
    pass
