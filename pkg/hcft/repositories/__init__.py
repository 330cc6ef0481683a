"""
Repository layer for data access.
"""

from .checkpoint_repository import CheckpointRepository
from .cohort_repository import CohortRepository
from .run_repository import RunRepository

__all__ = [
    "CohortRepository",
    "CheckpointRepository",
    "RunRepository",
]
