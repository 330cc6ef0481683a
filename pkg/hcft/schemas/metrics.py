"""
Metric result schemas.
"""

from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class ClassificationMetrics(BaseModel):
    """Accuracy and F1 (macro; positive-class F1 for two classes)."""

    acc: float
    f1: float
    per_class_f1: List[float] = Field(default_factory=list)


class FrocPoint(BaseModel):
    threshold: float
    fpi: float = Field(..., ge=0.0)
    sensitivity: float = Field(..., ge=0.0, le=1.0)


class FrocCurve(BaseModel):
    """Sensitivity against average false positives per image."""

    points: List[FrocPoint]
    n_slides: int
    n_tumor: int

    @model_validator(mode="after")
    def validate_monotone(self) -> "FrocCurve":
        """Sensitivity and fpi never decrease along the curve."""
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.fpi < prev.fpi or cur.sensitivity < prev.sensitivity:
                raise ValueError("FROC points must be sorted with nondecreasing fpi and sensitivity")
        return self


class PatchMetrics(BaseModel):
    """Patch-level metrics of one score source."""

    acc: Optional[float] = None
    auc: Optional[float] = None
    f1: Optional[float] = None
    cpm: Optional[float] = None
