"""Exception hierarchy shared by all gcalc modules."""


class GCalcError(Exception):
    pass


class BandViolationError(GCalcError):
    """A volatility control produced a value outside its band."""


class AlignmentError(GCalcError):
    """A process breakpoint does not sit on the simulation grid."""


class ContractError(GCalcError):
    """A declared bound or adaptedness contract was broken."""


class ConfigurationError(GCalcError):
    pass


class EvaluationError(GCalcError):
    """A coefficient evaluated to a non-finite value."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
