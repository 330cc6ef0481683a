"""
Report API response schemas.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel

from hcft.schemas.metrics import FrocPoint


class RunSummary(BaseModel):
    """Run listed by the report API."""

    name: str
    rounds_completed: int


class RunDetail(BaseModel):
    """Echoed configuration and per-round summary rows of one run."""

    name: str
    config: Dict[str, str]
    rounds: List[Dict[str, str]]


class RoundDetail(BaseModel):
    """``metric,value`` report of one round."""

    name: str
    round: int
    metrics: Dict[str, str]


class FrocResponse(BaseModel):
    """FROC points of one score source with its CPM."""

    name: str
    round: int
    score: str
    points: List[FrocPoint]
    cpm: Optional[float] = None


class HeatmapRow(BaseModel):
    """Per-patch attention and confidence of one slide."""

    slide_id: str
    patch_index: int
    attention: float
    p_y: float
    score: float
    rank: int
