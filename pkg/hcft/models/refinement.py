"""
Pseudo-label state: confidence table, high/low split, refinement sets and D*.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from hcft.models.bag import InstanceRef
from hcft.models.cluster import ClassClusterSets, ClusterModel

# instance ref -> pseudo label
LabeledSet = Dict[InstanceRef, int]


@dataclass(frozen=True, eq=False)
class BagConfidence:
    """Class-wise confidence of one bag."""

    slide_id: str
    label: int
    attention: np.ndarray
    p_label: np.ndarray
    scores: np.ndarray
    order: np.ndarray
    k_t: int

    @property
    def ranks(self) -> np.ndarray:
        """0-based position of each instance in the descending order."""
        ranks = np.empty_like(self.order)
        ranks[self.order] = np.arange(self.order.size)
        return ranks

    @property
    def top(self) -> np.ndarray:
        return self.order[: self.k_t]


@dataclass(frozen=True)
class ConfidenceTable:
    """Confidence of every training bag for one iteration."""

    bags: Dict[str, BagConfidence]
    t: int
    k0: int

    @property
    def total_high(self) -> int:
        return sum(b.k_t for b in self.bags.values())


@dataclass(frozen=True)
class SplitSets:
    """High-confidence set T_h (label = bag label) and low set T_l (label -1)."""

    high: LabeledSet
    low: LabeledSet

    def __post_init__(self) -> None:
        overlap = self.high.keys() & self.low.keys()
        if overlap:
            raise ValueError(f"T_h and T_l overlap on {len(overlap)} instance(s)")


class PatchSource(str, Enum):
    """Where a D* entry came from."""

    POS = "pos"
    HARDNEG_FROM_TL = "hardneg_from_Tl"
    HARDNEG_FROM_TH = "hardneg_from_Th"


@dataclass(frozen=True, order=True)
class PatchEntry:
    ref: InstanceRef
    label: int
    source: PatchSource


@dataclass(frozen=True)
class PatchDataset:
    """
    Refined patch dataset over 2n-1 classes.

    Labels 0..n-1 are positives of that class, n..2n-2 are hard negatives
    resembling class ``label - n + 1``.
    """

    entries: Tuple[PatchEntry, ...]
    n_classes: int
    warnings: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n_patch_classes(self) -> int:
        return 2 * self.n_classes - 1

    @property
    def refs(self) -> List[InstanceRef]:
        return [e.ref for e in self.entries]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def histogram(self) -> List[int]:
        counts = [0] * self.n_patch_classes
        for entry in self.entries:
            counts[entry.label] += 1
        return counts

    def present_classes(self) -> List[int]:
        return [c for c, n in enumerate(self.histogram()) if n > 0]


@dataclass(frozen=True)
class RefinementState:
    """Every set produced by one pass of the heuristic clustering strategy."""

    high: LabeledSet
    low: LabeledSet
    n_original: LabeledSet
    n_middle_l: LabeledSet
    n_middle_h: LabeledSet
    n_final: LabeledSet
    cleaned_high: LabeledSet
    first: Optional[ClassClusterSets] = None
    second: Optional[ClassClusterSets] = None
    first_clusters: Optional[ClusterModel] = None
    second_clusters: Optional[ClusterModel] = None
    warnings: List[str] = field(default_factory=list)
