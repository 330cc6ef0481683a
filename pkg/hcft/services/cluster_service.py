"""
Cluster service: seeded K-means and cluster classification.
"""

from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

from hcft.core.logging import get_logger
from hcft.core.ndmath import as_matrix, make_rng
from hcft.models.cluster import ClassClusterSets, ClusterModel
from hcft.utils.exceptions import ArgumentException, DimensionMismatchException

logger = get_logger(__name__)

_KMEANS_STREAM = 20


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(M, C) squared Euclidean distances."""
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("mcd,mcd->mc", diff, diff)


def _kmeans_pp(points: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    closest = squared_distances(points, points[chosen]).min(axis=1)
    for _ in range(1, c):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(m))
        else:
            idx = int(rng.choice(m, p=closest / total))
        chosen.append(idx)
        closest = np.minimum(closest, squared_distances(points, points[[idx]])[:, 0])
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> ClusterModel:
    c = centroids.shape[0]
    dist = squared_distances(points, centroids)
    assignment = np.argmin(dist, axis=1)
    inertia = float(dist[np.arange(points.shape[0]), assignment].sum())
    trace = [inertia]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        for j in range(c):
            members = assignment == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
        empty = [j for j in range(c) if not (assignment == j).any()]
        if empty:
            own = dist[np.arange(points.shape[0]), assignment]
            for j in empty:
                far = int(np.argmax(own))
                centroids[j] = points[far]
                own[far] = -1.0
        dist = squared_distances(points, centroids)
        new_assignment = np.argmin(dist, axis=1)
        inertia = float(dist[np.arange(points.shape[0]), new_assignment].sum())
        trace.append(inertia)
        converged = np.array_equal(new_assignment, assignment) and not empty
        assignment = new_assignment
        if converged:
            break
    return ClusterModel(
        centroids=centroids,
        assignment=assignment.astype(np.int64),
        inertia=inertia,
        inertia_trace=tuple(trace),
        iterations=iterations,
    )


def kmeans(
    points: np.ndarray,
    n_clusters: int,
    seed: int,
    restarts: int = 10,
    max_iter: int = 300,
    stream: int = 0,
) -> ClusterModel:
    """
    Lloyd's algorithm with k-means++ seeding, best of ``restarts`` runs.

    Empty clusters are re-seeded to the point farthest from its centroid.

    Args:
        points: (M, D) matrix
        n_clusters: Number of clusters C
        seed: Seed of the restart generators
        restarts: Independent runs
        max_iter: Lloyd iteration cap
        stream: Extra seed component separating call sites

    Returns:
        ClusterModel: Lowest-inertia result, earliest restart on ties

    Raises:
        ArgumentException: If there are fewer points than clusters
    """
    X = as_matrix(points, "points")
    if n_clusters < 1:
        raise ArgumentException(f"need at least one cluster, got {n_clusters}")
    if X.shape[0] < n_clusters:
        raise ArgumentException(f"{X.shape[0]} point(s) cannot form {n_clusters} clusters")
    if restarts < 1:
        raise ArgumentException(f"need at least one restart, got {restarts}")

    best: Optional[ClusterModel] = None
    for r in range(restarts):
        rng = make_rng(seed, _KMEANS_STREAM, stream, r)
        result = _lloyd(X, _kmeans_pp(X, n_clusters, rng), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    logger.debug(
        "K-means finished",
        points=X.shape[0],
        clusters=n_clusters,
        inertia=best.inertia,
        iterations=best.iterations,
    )
    return best


def cluster_fractions(
    assignment: np.ndarray, labels: np.ndarray, n_clusters: int, classes: Sequence[int]
) -> np.ndarray:
    """
    Share of each class among the labelled members of each cluster.

    Args:
        assignment: Cluster index per point
        labels: Label per point, -1 for unlabelled
        n_clusters: Number of clusters
        classes: Class columns of the table

    Returns:
        np.ndarray: (C, len(classes)); rows of clusters without labelled members are 0
    """
    assignment = np.asarray(assignment)
    labels = np.asarray(labels)
    if assignment.shape != labels.shape:
        raise DimensionMismatchException("cluster_fractions", assignment.shape, labels.shape)
    table = np.zeros((n_clusters, len(classes)))
    for j in range(n_clusters):
        member_labels = labels[(assignment == j) & (labels >= 0)]
        if member_labels.size == 0:
            continue
        for col, a in enumerate(classes):
            table[j, col] = np.count_nonzero(member_labels == a) / member_labels.size
    return table


def select_clusters(fractions: np.ndarray, theta: float) -> FrozenSet[int]:
    """
    Clusters attributed to one class from its per-cluster fractions.

    Clusters with a fraction above ``theta``; when none exceeds it, the single
    cluster with the highest fraction (lowest index on ties).
    """
    if not 0.0 < theta <= 1.0:
        raise ArgumentException(f"theta must lie in (0, 1], got {theta}")
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.max() <= theta:
        return frozenset({int(np.argmax(fractions))})
    return frozenset(int(j) for j in np.flatnonzero(fractions > theta))


def classify_clusters(
    clusters: ClusterModel, labels: np.ndarray, label: int, theta: float
) -> FrozenSet[int]:
    """
    Cluster set ``L_a`` of one class.

    Args:
        clusters: Clustering of the labelled points
        labels: Label per clustered point, -1 for unlabelled
        label: Class ``a``
        theta: Purity threshold in (0, 1]

    Returns:
        FrozenSet[int]: Cluster indices attributed to the class
    """
    fractions = cluster_fractions(clusters.assignment, labels, clusters.n_clusters, [label])
    return select_clusters(fractions[:, 0], theta)


def classify_all(
    clusters: ClusterModel,
    labels: np.ndarray,
    theta: float,
    classes: Optional[Iterable[int]] = None,
) -> ClassClusterSets:
    """
    Cluster sets of every class present in ``labels`` plus a single owner per cluster.

    The owner of a cluster is the class with the highest fraction among the
    classes whose set contains it (lowest class on ties), or -1.
    """
    labels = np.asarray(labels)
    present = sorted(int(a) for a in np.unique(labels[labels >= 0]))
    if classes is not None:
        present = [a for a in sorted(set(classes)) if a in present]
    fractions = cluster_fractions(clusters.assignment, labels, clusters.n_clusters, present)

    sets: Dict[int, FrozenSet[int]] = {}
    for col, a in enumerate(present):
        sets[a] = select_clusters(fractions[:, col], theta)

    owner = np.full(clusters.n_clusters, -1, dtype=np.int64)
    for j in range(clusters.n_clusters):
        claims = [(fractions[j, col], a) for col, a in enumerate(present) if j in sets[a]]
        if claims:
            owner[j] = min(claims, key=lambda fa: (-fa[0], fa[1]))[1]

    warnings: List[str] = []
    owned = set(int(o) for o in owner if o >= 0)
    if len(present) > 1 and len(owned) <= 1:
        warnings.append(
            f"degenerate clustering: every cluster belongs to class {sorted(owned)}"
        )
        logger.warning("Degenerate cluster classification", classes=present, owners=sorted(owned))

    # fraction table indexed by class id
    full = np.zeros((clusters.n_clusters, (max(present) + 1) if present else 0))
    for col, a in enumerate(present):
        full[:, a] = fractions[:, col]
    return ClassClusterSets(sets=sets, fractions=full, owner=owner, theta=theta, warnings=warnings)


def distance_to_class(h: np.ndarray, members: FrozenSet[int], clusters: ClusterModel) -> float:
    """
    Distance from an embedding to the nearest centroid of a class.

    Raises:
        ArgumentException: If the class has no clusters
    """
    if not members:
        raise ArgumentException("distance to an empty cluster set")
    idx = sorted(members)
    diff = clusters.centroids[idx] - np.asarray(h, dtype=np.float64)[None, :]
    return float(np.sqrt((diff * diff).sum(axis=1)).min())


def distances_to_classes(
    points: np.ndarray,
    sets: ClassClusterSets,
    clusters: ClusterModel,
    classes: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """(M, len(classes)) distances, columns in ``classes`` order (default ``sets.classes``)."""
    X = as_matrix(points, "points")
    dist = np.sqrt(squared_distances(X, clusters.centroids))
    cols = []
    for a in sets.classes if classes is None else classes:
        members = sorted(sets.members(a))
        if not members:
            raise ArgumentException(f"class {a} has no clusters")
        cols.append(dist[:, members].min(axis=1))
    return np.stack(cols, axis=1) if cols else np.zeros((X.shape[0], 0))
