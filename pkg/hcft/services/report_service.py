"""
Report service: read-only views over stored runs for the report API.
"""

from typing import List, Optional

from hcft.core.logging import get_logger
from hcft.repositories.run_repository import FROC_FILES, RunRepository
from hcft.schemas.report import NA
from hcft.schemas.run import FrocResponse, HeatmapRow, RoundDetail, RunDetail, RunSummary
from hcft.utils.exceptions import DataException, RunNotFoundException

logger = get_logger(__name__)


class ReportService:
    """Service for browsing run directories."""

    def __init__(self, repository: RunRepository):
        self.repository = repository

    def _require_run(self, name: str) -> None:
        if name not in self.repository.list_runs():
            raise RunNotFoundException(f"Run {name} not found")

    def _require_round(self, name: str, t: int) -> None:
        self._require_run(name)
        if t not in self.repository.completed_rounds(name):
            raise RunNotFoundException(f"Round {t} of run {name} not found")

    def list_runs(self) -> List[RunSummary]:
        """
        List stored runs.

        Returns:
            List[RunSummary]: Runs sorted by name
        """
        return [
            RunSummary(name=name, rounds_completed=len(self.repository.completed_rounds(name)))
            for name in self.repository.list_runs()
        ]

    def get_run(self, name: str) -> RunDetail:
        """
        Get the echoed configuration and summary rows of a run.

        Raises:
            RunNotFoundException: If the run does not exist
        """
        self._require_run(name)
        return RunDetail(
            name=name,
            config=self.repository.read_config(name),
            rounds=self.repository.read_summary(name),
        )

    def get_round(self, name: str, t: int) -> RoundDetail:
        self._require_round(name, t)
        return RoundDetail(name=name, round=t, metrics=self.repository.read_report_rows(name, t))

    def get_froc(self, name: str, t: int, score: str) -> FrocResponse:
        """
        Get FROC points of one score source with the round's CPM.

        Args:
            name: Run name
            t: Round index
            score: ``mil`` or ``head``

        Raises:
            RunNotFoundException: If the run, round or score source is unknown
        """
        if score not in FROC_FILES:
            raise RunNotFoundException(f"Unknown score source {score}")
        self._require_round(name, t)
        try:
            points = self.repository.read_froc(name, t, score)
        except DataException as e:
            logger.warning("FROC file unreadable", name=name, round=t, error=e.detail)
            raise RunNotFoundException(e.detail)
        text = self.repository.read_report_rows(name, t).get(f"{score}_cpm", NA)
        cpm: Optional[float] = None if text == NA else float(text)
        return FrocResponse(name=name, round=t, score=score, points=points, cpm=cpm)

    def get_heatmap(self, name: str, t: int, slide_id: str) -> List[HeatmapRow]:
        self._require_round(name, t)
        rows = self.repository.read_heatmap(name, t, slide_id)
        if not rows:
            raise RunNotFoundException(f"Slide {slide_id} not found in round {t} of run {name}")
        return rows
