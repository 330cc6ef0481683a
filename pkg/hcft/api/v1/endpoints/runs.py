"""
Run report API endpoints.
"""

from typing import List

from fastapi import APIRouter, Depends, Path, Query

from hcft.api.dependencies import get_report_service
from hcft.core.logging import get_logger
from hcft.schemas.run import FrocResponse, HeatmapRow, RoundDetail, RunDetail, RunSummary
from hcft.services.report_service import ReportService

logger = get_logger(__name__)

router = APIRouter()


@router.get("/", response_model=List[RunSummary])
def list_runs(service: ReportService = Depends(get_report_service)) -> List[RunSummary]:
    """
    List stored runs.

    Returns:
        List[RunSummary]: Run names with their completed round counts
    """
    runs = service.list_runs()
    logger.info("Runs listed", count=len(runs))
    return runs


@router.get("/{name}", response_model=RunDetail)
def get_run(name: str, service: ReportService = Depends(get_report_service)) -> RunDetail:
    """
    Get a run's echoed configuration and per-round summary.

    Raises:
        RunNotFoundException: If the run does not exist
    """
    detail = service.get_run(name)
    logger.info("Run report served", run=name)
    return detail


@router.get("/{name}/rounds/{t}", response_model=RoundDetail)
def get_round(
    name: str,
    t: int = Path(..., ge=0, description="Round index"),
    service: ReportService = Depends(get_report_service),
) -> RoundDetail:
    return service.get_round(name, t)


@router.get("/{name}/rounds/{t}/froc", response_model=FrocResponse)
def get_froc(
    name: str,
    t: int = Path(..., ge=0, description="Round index"),
    score: str = Query("mil", description="Score source: mil or head"),
    service: ReportService = Depends(get_report_service),
) -> FrocResponse:
    """
    Get the FROC curve of a round.

    Args:
        name: Run name
        t: Round index
        score: Score source
        service: Report service

    Returns:
        FrocResponse: Points in descending threshold order plus CPM
    """
    return service.get_froc(name, t, score)


@router.get("/{name}/rounds/{t}/heatmap/{slide_id}", response_model=List[HeatmapRow])
def get_heatmap(
    name: str,
    slide_id: str,
    t: int = Path(..., ge=0, description="Round index"),
    service: ReportService = Depends(get_report_service),
) -> List[HeatmapRow]:
    """Per-patch attention and confidence of one slide."""
    return service.get_heatmap(name, t, slide_id)
