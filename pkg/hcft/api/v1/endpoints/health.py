"""
Health check endpoints.
"""

from datetime import datetime, timezone

from fastapi import APIRouter, Depends

from hcft.api.dependencies import get_run_repository
from hcft.core.config import settings
from hcft.core.logging import get_logger
from hcft.repositories.run_repository import RunRepository

logger = get_logger(__name__)

router = APIRouter()


@router.get("/health")
def health_check(repository: RunRepository = Depends(get_run_repository)) -> dict:
    """
    Health check with the runs directory status.

    Returns:
        dict: Health status information
    """
    runs_dir = repository.runs_dir
    if not runs_dir.is_dir():
        logger.warning("Health check: runs directory missing", runs_dir=str(runs_dir))
    return {
        "status": "healthy",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "service": settings.PROJECT_NAME,
        "version": settings.VERSION,
        "environment": settings.ENVIRONMENT,
        "runs_dir": str(runs_dir),
        "runs_dir_exists": runs_dir.is_dir(),
    }
