"""Exception hierarchy shared by all modules."""


class StabRegError(Exception):
    """Base class for errors raised by stabreg."""


class InputError(StabRegError, ValueError):
    """Malformed or missing input (files, columns, cells)."""


class ValidationError(StabRegError, ValueError):
    """A value violates a documented precondition or invariant."""


class NumericalError(StabRegError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""


class SingularDesignError(NumericalError):
    """The design matrix restricted to a subset is rank deficient."""

    def __init__(self, subset, message=None):
        self.subset = tuple(subset)
        super().__init__(message or f"singular design for subset {self.subset}")


class UnderdeterminedError(NumericalError):
    """Too few rows to fit the requested number of parameters."""
