"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (also a
``ValueError``); numerical breakdowns derive from :class:`NumericalError`
(also an ``ArithmeticError``). The CLI maps the two families onto distinct
exit codes.
"""


class StochBasinError(Exception):
    """Base class for all package errors."""


class ValidationError(StochBasinError, ValueError):
    pass


class NumericalError(StochBasinError, ArithmeticError):
    pass


class NegativeEntry(ValidationError):
    pass


class RowSumViolation(ValidationError):
    """A row of a supposedly stochastic matrix does not sum to one.

    Attributes
    ----------
    row : int
        Index of the worst row.
    deviation : float
        Signed deviation ``sum(row) - 1`` of that row.
    """

    def __init__(self, row, deviation):
        self.row = int(row)
        self.deviation = float(deviation)
        super().__init__(
            f"row {self.row} sums to 1{self.deviation:+.3e} (worst row)")


class DuplicateEntry(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SizeGuard(ValidationError):
    pass


class EmptyTarget(ValidationError):
    pass


class OverlappingSets(ValidationError):
    pass


class ExitProbabilityViolation(ValidationError):
    pass


class DomainViolation(ValidationError):
    pass


class WeightViolation(ValidationError):
    pass


class InvalidBounds(ValidationError):
    pass


class InvalidDelta(ValidationError):
    pass


class EmptyRow(ValidationError):
    pass


class SolverDivergence(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class IntegrationFailure(NumericalError):
    pass
