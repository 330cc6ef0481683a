"""
Pydantic schemas package.
"""

from .cohort import CohortSpec
from .config import RunConfig
from .metrics import ClassificationMetrics, FrocCurve, FrocPoint, PatchMetrics
from .report import RoundReport, SweepRow, SweepSummaryRow
from .run import FrocResponse, HeatmapRow, RoundDetail, RunDetail, RunSummary
from .training import EncoderHyper, MILHyper, TrainingHistory

__all__ = [
    # Cohort schemas
    "CohortSpec",
    # Configuration schemas
    "RunConfig",
    "MILHyper",
    "EncoderHyper",
    "TrainingHistory",
    # Metric schemas
    "ClassificationMetrics",
    "PatchMetrics",
    "FrocPoint",
    "FrocCurve",
    # Report schemas
    "RoundReport",
    "SweepRow",
    "SweepSummaryRow",
    # API schemas
    "RunSummary",
    "RunDetail",
    "RoundDetail",
    "FrocResponse",
    "HeatmapRow",
]
