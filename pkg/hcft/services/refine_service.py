"""
Refine service: heuristic clustering over pseudo labels.

One pass clusters the high-confidence set, mines potential negatives from the
low-confidence set, re-clusters both together to search hard negatives and
clean positives, and assembles the refined patch dataset D*.

Label vocabulary: positives use their bag class 0..n-1; a hard negative that
resembles positive class c (c >= 1) uses ``n + c - 1``.
"""

from dataclasses import dataclass
from typing import Collection, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hcft.core.logging import get_logger
from hcft.models.bag import CohortIndex, InstanceRef
from hcft.models.cluster import ClassClusterSets, ClusterModel
from hcft.models.refinement import (
    LabeledSet,
    PatchDataset,
    PatchEntry,
    PatchSource,
    RefinementState,
    SplitSets,
)
from hcft.services.cluster_service import classify_all, distances_to_classes, kmeans
from hcft.utils.exceptions import ArgumentException, ContractViolationException, SeverityRuleViolationException

logger = get_logger(__name__)

_FIRST_CLUSTERING = 1
_SECOND_CLUSTERING = 2


def hard_negative_label(mimicked: int, n_classes: int) -> int:
    """Label of a hard negative resembling positive class ``mimicked``."""
    if not 1 <= mimicked < n_classes:
        raise ArgumentException(f"no hard-negative class for class {mimicked} of {n_classes}")
    return n_classes + mimicked - 1


def mimicked_class(label: int, n_classes: int) -> int:
    """Inverse of :func:`hard_negative_label`."""
    return label - n_classes + 1


@dataclass(frozen=True)
class RefineOptions:
    """Clustering parameters and component switches of one refinement pass."""

    n_classes: int
    clusters: int = 5
    theta: float = 0.5
    seed: int = 0
    restarts: int = 10
    max_iter: int = 300
    enable_mining: bool = True
    enable_searching: bool = True
    enable_cleaning: bool = True
    round_index: int = 0


def _cluster_labeled(
    index: CohortIndex,
    labeled: Sequence[Tuple[InstanceRef, int]],
    options: RefineOptions,
    stage: int,
    warnings: List[str],
) -> Tuple[ClusterModel, ClassClusterSets]:
    refs = [ref for ref, _ in labeled]
    labels = np.array([label for _, label in labeled], dtype=np.int64)
    points = index.embeddings(refs)
    n_clusters = options.clusters
    if points.shape[0] < n_clusters:
        warnings.append(f"only {points.shape[0]} point(s) for {n_clusters} clusters")
        logger.warning("Fewer points than clusters", points=points.shape[0], clusters=n_clusters)
        n_clusters = points.shape[0]
    clusters = kmeans(
        points,
        n_clusters,
        seed=options.seed,
        restarts=options.restarts,
        max_iter=options.max_iter,
        stream=options.round_index * 10 + stage,
    )
    sets = classify_all(clusters, labels, options.theta)
    warnings.extend(sets.warnings)
    return clusters, sets


def mine_potential_negatives(
    low: LabeledSet,
    sets: ClassClusterSets,
    clusters: ClusterModel,
    index: CohortIndex,
    n_classes: int,
) -> LabeledSet:
    """
    Low-confidence instances whose nearest class outranks their bag label.

    Args:
        low: T_l
        sets: Cluster sets of the first clustering
        clusters: First clustering
        index: Cohort lookup
        n_classes: Number of bag classes n

    Returns:
        LabeledSet: N_original with provisional hard-negative labels
    """
    refs = sorted(low)
    # classes whose L_a is empty have no distance
    classes = [a for a in sets.classes if sets.members(a)]
    if not refs or not classes:
        return {}
    dist = distances_to_classes(index.embeddings(refs), sets, clusters, classes)
    nearest = [classes[int(col)] for col in np.argmin(dist, axis=1)]
    mined: LabeledSet = {}
    for ref, a in zip(refs, nearest):
        if a > index.bag_label(ref):
            mined[ref] = hard_negative_label(a, n_classes)
    return mined


@dataclass(frozen=True)
class RefinedSets:
    cleaned_high: LabeledSet
    n_middle_l: LabeledSet
    n_middle_h: LabeledSet
    n_final: LabeledSet
    sets: Optional[ClassClusterSets]
    clusters: Optional[ClusterModel]


def refine_labels(
    high: LabeledSet,
    n_original: LabeledSet,
    index: CohortIndex,
    options: RefineOptions,
    warnings: Optional[List[str]] = None,
) -> RefinedSets:
    """
    Re-cluster T_h with N_original to search hard negatives and clean positives.

    Each cluster is owned by at most one class. Then:

    * N_middle_l keeps N_original members unless their cluster's owner is at
      most their bag label; members in a cluster of another higher class adopt it.
    * N_middle_h takes T_h members whose cluster's owner exceeds their bag label.
    * Cleaned T_h keeps T_h members whose cluster's owner equals their bag label.

    Raises:
        ArgumentException: If both inputs are empty
    """
    warnings = warnings if warnings is not None else []
    n = options.n_classes
    labeled = [(ref, label) for ref, label in sorted(high.items())]
    labeled += [(ref, mimicked_class(label, n)) for ref, label in sorted(n_original.items())]
    if not labeled:
        raise ArgumentException("refine_labels needs a nonempty T_h or N_original")

    clusters, sets = _cluster_labeled(index, labeled, options, _SECOND_CLUSTERING, warnings)
    owner = sets.owner[clusters.assignment]
    refs = [ref for ref, _ in labeled]
    owner_of = {ref: int(o) for ref, o in zip(refs, owner)}

    n_middle_l: LabeledSet = {}
    for ref, label in sorted(n_original.items()):
        o = owner_of[ref]
        y = index.bag_label(ref)
        if 0 <= o <= y:
            continue
        n_middle_l[ref] = hard_negative_label(o, n) if o > y else label

    n_middle_h: LabeledSet = {}
    cleaned: LabeledSet = {}
    for ref, y in sorted(high.items()):
        o = owner_of[ref]
        moves = o > y
        if moves and options.enable_searching:
            n_middle_h[ref] = hard_negative_label(o, n)
        if options.enable_cleaning:
            if o == y:
                cleaned[ref] = y
        elif ref not in n_middle_h:
            cleaned[ref] = y

    n_final = {**n_middle_l, **n_middle_h}
    return RefinedSets(
        cleaned_high=cleaned,
        n_middle_l=n_middle_l,
        n_middle_h=n_middle_h,
        n_final=n_final,
        sets=sets,
        clusters=clusters,
    )


def run_refinement(split: SplitSets, index: CohortIndex, options: RefineOptions) -> RefinementState:
    """
    Full refinement pass from a high/low split.

    Args:
        split: T_h and T_l
        index: Cohort lookup with current embeddings
        options: Clustering parameters and switches

    Returns:
        RefinementState: Every intermediate set
    """
    warnings: List[str] = []
    if not split.high:
        raise ArgumentException("refinement needs a nonempty high-confidence set")

    first_clusters, first = _cluster_labeled(
        index, sorted(split.high.items()), options, _FIRST_CLUSTERING, warnings
    )
    n_original: LabeledSet = {}
    if options.enable_mining:
        n_original = mine_potential_negatives(split.low, first, first_clusters, index, options.n_classes)

    refined = refine_labels(split.high, n_original, index, options, warnings)

    state = RefinementState(
        high=split.high,
        low=split.low,
        n_original=n_original,
        n_middle_l=refined.n_middle_l,
        n_middle_h=refined.n_middle_h,
        n_final=refined.n_final,
        cleaned_high=refined.cleaned_high,
        first=first,
        second=refined.sets,
        first_clusters=first_clusters,
        second_clusters=refined.clusters,
        warnings=warnings,
    )
    logger.info(
        "Refinement finished",
        round=options.round_index,
        high=len(state.high),
        low=len(state.low),
        n_original=len(state.n_original),
        n_middle_l=len(state.n_middle_l),
        n_middle_h=len(state.n_middle_h),
        n_final=len(state.n_final),
        cleaned_high=len(state.cleaned_high),
    )
    return state


def build_patch_dataset(
    cleaned_high: LabeledSet,
    n_final: LabeledSet,
    n_classes: int,
    from_high: Collection[InstanceRef] = (),
) -> PatchDataset:
    """
    Assemble D* from cleaned positives and final hard negatives.

    Args:
        cleaned_high: Positive entries labelled with their bag class
        n_final: Hard-negative entries labelled ``n + c - 1``
        n_classes: Number of bag classes n
        from_high: Refs of ``n_final`` that were found in T_h

    Returns:
        PatchDataset: Entries sorted by ref

    Raises:
        ContractViolationException: On overlapping inputs or out-of-range labels
    """
    overlap = cleaned_high.keys() & n_final.keys()
    if overlap:
        first = min(overlap)
        raise ContractViolationException(f"instance {first} appears in both positives and hard negatives")
    n_out = 2 * n_classes - 1
    from_high = set(from_high)
    entries = []
    for ref, label in cleaned_high.items():
        if not 0 <= label < n_classes:
            raise ContractViolationException(f"positive label {label} of {ref} outside 0..{n_classes - 1}")
        entries.append(PatchEntry(ref, label, PatchSource.POS))
    for ref, label in n_final.items():
        if not n_classes <= label < n_out:
            raise ContractViolationException(f"hard-negative label {label} of {ref} outside {n_classes}..{n_out - 1}")
        source = PatchSource.HARDNEG_FROM_TH if ref in from_high else PatchSource.HARDNEG_FROM_TL
        entries.append(PatchEntry(ref, label, source))
    entries.sort()

    dataset = PatchDataset(entries=tuple(entries), n_classes=n_classes)
    empty = [c for c, count in enumerate(dataset.histogram()) if count == 0]
    warnings = tuple(f"class {c} has no entries in D*" for c in empty)
    if warnings:
        logger.warning("D* has empty classes", classes=empty, size=len(dataset))
    return PatchDataset(entries=dataset.entries, n_classes=n_classes, warnings=warnings)


def audit_severity(dataset: PatchDataset, index: CohortIndex) -> None:
    """
    Check every D* label against its bag label.

    Positive labels must equal the bag label; hard negatives must resemble a
    class above it.

    Raises:
        SeverityRuleViolationException: On the first violating entry
    """
    n = dataset.n_classes
    for entry in dataset.entries:
        y = index.bag_label(entry.ref)
        if entry.label < n:
            if entry.label != y:
                raise SeverityRuleViolationException(
                    entry.ref.slide_id, entry.ref.patch_index, entry.label, y
                )
        elif mimicked_class(entry.label, n) <= y:
            raise SeverityRuleViolationException(
                entry.ref.slide_id, entry.ref.patch_index, entry.label, y
            )


def positive_purity(labeled: LabeledSet, index: CohortIndex) -> Optional[float]:
    """Share of positive-labelled entries whose truth label matches; None without truth."""
    hits = 0
    total = 0
    for ref, label in labeled.items():
        if label <= 0:
            continue
        truth = index.truth(ref)
        if truth is None:
            return None
        total += 1
        hits += int(truth == label)
    return hits / total if total else None


def mimic_audit(state: RefinementState, index: CohortIndex, refs: Sequence[InstanceRef]) -> Dict[str, Optional[float]]:
    """
    Planted-mimic statistics of a refinement pass.

    Args:
        state: Refinement result
        index: Cohort lookup with mimic companions
        refs: All training instances

    Returns:
        Dict with ``mimic_precision`` (share of N_final that are planted mimics),
        ``mimic_recall`` (share of minable mimics found in N_final) and
        ``mimic_base_rate`` (share of mimics among truth-negative instances)
    """
    negatives = 0
    mimics = 0
    minable = 0
    for ref in refs:
        bag, k = index.locate(ref)
        if bag.truth_labels is None or bag.mimic_of is None:
            return {"mimic_precision": None, "mimic_recall": None, "mimic_base_rate": None}
        if bag.truth_labels[k] == 0:
            negatives += 1
            if bag.mimic_of[k] > 0:
                mimics += 1
                minable += int(bag.mimic_of[k] > bag.label)
    found = [ref for ref in state.n_final if index.mimic(ref) > 0]
    found_minable = [ref for ref in found if index.mimic(ref) > index.bag_label(ref)]
    return {
        "mimic_precision": len(found) / len(state.n_final) if state.n_final else None,
        "mimic_recall": len(found_minable) / minable if minable else None,
        "mimic_base_rate": mimics / negatives if negatives else None,
    }
