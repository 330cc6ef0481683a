"""
API dependencies for FastAPI endpoints.
"""

from fastapi import Depends

from hcft.core.config import settings
from hcft.repositories.run_repository import RunRepository
from hcft.services.report_service import ReportService


def get_run_repository() -> RunRepository:
    """
    Get the run repository over ``settings.RUNS_DIR``.

    Returns:
        RunRepository: Read access to stored runs
    """
    return RunRepository(settings.RUNS_DIR)


def get_report_service(repository: RunRepository = Depends(get_run_repository)) -> ReportService:
    """
    Get report service instance.

    Args:
        repository: Run repository

    Returns:
        ReportService: Report service instance
    """
    return ReportService(repository)
