"""
Clustering results.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Tuple

import numpy as np


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """K-means result: centroids, nearest-centroid assignment and inertia."""

    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    inertia_trace: Tuple[float, ...] = ()
    iterations: int = 0

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_clusters)

    def __repr__(self) -> str:
        return f"<ClusterModel(C={self.n_clusters}, inertia={self.inertia:.6g})>"


@dataclass(frozen=True, eq=False)
class ClassClusterSets:
    """
    Per-class cluster sets ``L_a`` with the fraction table they came from.

    ``fractions[j, a]`` is the share of labelled members of cluster ``j``
    carrying label ``a``. ``owner[j]`` is the single class a cluster is
    attributed to (highest fraction among the classes claiming it, lowest
    class on ties) or -1 when no class claims it.
    """

    sets: Dict[int, FrozenSet[int]]
    fractions: np.ndarray
    owner: np.ndarray
    theta: float
    warnings: List[str] = field(default_factory=list)

    @property
    def classes(self) -> List[int]:
        return sorted(self.sets)

    def members(self, label: int) -> FrozenSet[int]:
        return self.sets.get(label, frozenset())

    def owner_of(self, cluster: int) -> int:
        return int(self.owner[cluster])
