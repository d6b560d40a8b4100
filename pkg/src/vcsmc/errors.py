"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values, ...)."""


class DecompositionError(NumericError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class DegenerateFilterError(NumericError):
    """Every particle weight vanished at some step."""

    def __init__(self, step: int):
        super().__init__(f"all particle weights are zero at step {step}")
        self.step = step


class DegenerateSupportError(DomainError):
    """A particle set has too few distinct values to smooth."""
