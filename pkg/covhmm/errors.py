"""
Errors - Exception hierarchy for the covariate HMM classifier
Every error renders as a single line naming the offending patient, file or field.
"""

from typing import Optional


class CovHmmError(ValueError):
    """
    Base error for all data and model problems.

    Args:
        message: Human readable description
        patient_id: Offending patient, when known
        path: Offending file, when known
        field: Offending field or column, when known
    """

    def __init__(
        self,
        message: str,
        patient_id: Optional[str] = None,
        path: Optional[str] = None,
        field: Optional[str] = None
    ):
        super().__init__(message)
        self.message = message
        self.patient_id = patient_id
        self.path = path
        self.field = field

    def with_context(
        self,
        patient_id: Optional[str] = None,
        path: Optional[str] = None,
        field: Optional[str] = None
    ) -> "CovHmmError":
        """Return a copy of this error with extra context filled in."""
        return type(self)(
            self.message,
            patient_id=self.patient_id or patient_id,
            path=self.path or path,
            field=self.field or field
        )

    def __str__(self) -> str:
        context = []
        if self.path:
            context.append(f"file={self.path}")
        if self.patient_id:
            context.append(f"patient={self.patient_id}")
        if self.field:
            context.append(f"field={self.field}")
        if not context:
            return self.message
        return f"{self.message} ({', '.join(context)})"


class DimensionMismatchError(CovHmmError):
    """Covariate vector length does not match a logit block."""


class DegenerateLikelihoodError(CovHmmError):
    """Forward mass vanished for every state at some time step."""


class NonFiniteObjectiveError(CovHmmError):
    """Weighted logit objective is NaN or infinite."""


class EmptySequenceError(CovHmmError):
    """Sequence has no bins, or no observed bin, after preprocessing."""


class SingleClassError(CovHmmError):
    """An operation needs both C and NC examples but got one class."""


class UndefinedMetricError(CovHmmError):
    """A metric denominator is zero."""


class DataQualityError(CovHmmError):
    """Input record violates a plausibility or type rule."""


class SchemaError(CovHmmError):
    """Serialized document does not follow the expected schema."""
