"""
Service layer for the refinement pipeline.
"""

from .pipeline_service import PipelineService
from .report_service import ReportService

__all__ = [
    "PipelineService",
    "ReportService",
]
