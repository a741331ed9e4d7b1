"""Exception hierarchy; the CLI maps ModelError subclasses to exit status 2."""


class ModelError(Exception):
    """Numerical or model-level failure."""


class DomainError(ModelError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NonErgodicChainError(ModelError):
    pass


class InstabilityError(ModelError):
    """Queue or fixed point has no stable steady state for the given load."""


class ConvergenceError(ModelError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


class EvaluationLimitError(ModelError):
    """Evaluation refused because a quantity underflows double precision."""


class NotApplicableError(ModelError):
    pass
