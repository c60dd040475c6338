"""Exception hierarchy shared by every layer of projlap."""

from __future__ import annotations


class ProjlapError(Exception):
    """Base class for all errors raised by projlap."""


class ExprSyntaxError(ProjlapError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {pointer}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class EvaluationDomainError(ProjlapError):
    """Division by zero, log of a nonpositive number, or a non-finite value."""


class ValidationError(ProjlapError):
    """An object or scenario violates a structural invariant."""


class DimensionError(ValidationError):
    pass


class DimensionTooSmallError(DimensionError):
    pass


class PreconditionError(ProjlapError):
    """Inputs are well formed but outside the domain of a construction."""


class WeightError(PreconditionError):
    pass


class ResonantWeightError(PreconditionError):
    """The weight hits one of the two excluded values (n+2)/(n+1), (n+3)/(n+1)."""

    def __init__(self, weight, resonance, n: int, which: str):
        self.weight = weight
        self.resonance = resonance
        self.n = n
        self.which = which
        super().__init__(
            f"weight {weight} is resonant for n={n}: equals {which} = {resonance}"
        )


class ShiftedResonanceError(ResonantWeightError):
    pass


class NonpositiveDensityError(PreconditionError):
    pass


class NonpositiveJacobianError(PreconditionError):
    pass


class SupportError(PreconditionError):
    """A test density is not compactly supported inside the quadrature box."""


class NearResonanceWarning(UserWarning):
    """Emitted when a weight lies within 1e-6 of a resonant value."""
