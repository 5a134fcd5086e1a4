"""Exception hierarchy shared by every module."""


class MbsaError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MbsaError):
    """Input file could not be parsed."""


class ValidationError(MbsaError):
    """Input parsed but violates a domain invariant."""


class DimensionError(ValidationError):
    """Array shapes disagree, or there are too few assets or dates."""


class InsufficientHistoryError(MbsaError):
    """Not enough observations for a rolling window or estimator warm-up."""


class InactiveError(MbsaError):
    """An MBSA was queried outside its active lifetime."""


class SolverError(MbsaError):
    """The conic solver failed or returned an infeasible / inaccurate point."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class BankruptcyError(MbsaError):
    """Portfolio value fell to zero or below."""
