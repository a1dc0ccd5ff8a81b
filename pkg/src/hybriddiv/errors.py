"""Exception hierarchy shared by the solver, oracle and simulator."""


class HybridDivError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(HybridDivError, ValueError):
    pass


class AssumptionHViolated(ParameterError):
    """The continuous-rate cap is not strictly below every regime drift."""


class NonPositiveParameter(ParameterError):
    pass


class RegimeCountUnsupported(ParameterError):
    pass


class RootStructureViolated(HybridDivError):
    """Characteristic roots are missing, complex, repeated or wrongly signed."""


class SingularParticularSystem(HybridDivError):
    pass


class IllConditionedSystem(HybridDivError):
    pass


class NoRoot(HybridDivError):
    """The outer threshold search found no zero of the slope residuals."""


class NoValidCase(HybridDivError):
    """No (ordering, case) candidate passed every acceptance check."""


class NegativeSurplus(HybridDivError, ValueError):
    pass


class InvalidStart(HybridDivError, ValueError):
    pass


class NotConverged(HybridDivError):
    pass
