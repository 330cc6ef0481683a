"""
Cohort service: synthetic cohort generation and stratified splitting.

Generated bags follow the MIL label relation: a bag's label equals the
highest truth label among its instances. Every bag also carries planted
"mimic" instances: negatives drawn near a positive class prototype.
"""

from typing import Dict, List, Sequence

import numpy as np

from hcft.core.logging import get_logger
from hcft.core.ndmath import make_rng
from hcft.models.bag import Bag, Split
from hcft.schemas.cohort import CohortSpec
from hcft.utils.exceptions import ArgumentException, GenerationException, StratificationException

logger = get_logger(__name__)

# position of a mimic prototype along the normal -> class displacement
MIMIC_POSITION = 0.35
# orthogonal jitter of a mimic prototype, relative to the separation
MIMIC_JITTER = 0.2
# share of a Y >= 2 bag's positives drawn from lower positive classes
LOWER_CLASS_SHARE = 0.3

_PROTOTYPE_STREAM = 1
_BAG_STREAM = 2
_SPLIT_STREAM = 3


def to_float32_grid(x: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 while keeping float64 storage."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


class Prototypes:
    """Normal, per-class and per-class mimic prototypes in raw space."""

    def __init__(self, spec: CohortSpec):
        n, d, s = spec.n_classes, spec.d_raw, spec.class_prototype_separation
        if d < n - 1:
            raise GenerationException(
                f"d_raw={d} cannot hold {n - 1} orthogonal class directions"
            )
        rng = make_rng(spec.seed, _PROTOTYPE_STREAM)
        basis, _ = np.linalg.qr(rng.normal(size=(d, d)))

        self.normal = np.zeros(d)
        self.classes: Dict[int, np.ndarray] = {}
        self.mimics: Dict[int, np.ndarray] = {}
        for c in range(1, n):
            direction = basis[:, c - 1]
            self.classes[c] = s * direction
            jitter = rng.normal(size=d)
            jitter -= (jitter @ direction) * direction
            norm = np.linalg.norm(jitter)
            jitter = jitter / norm if norm > 1e-12 else np.zeros(d)
            self.mimics[c] = MIMIC_POSITION * self.classes[c] + MIMIC_JITTER * s * jitter

            to_class = np.linalg.norm(self.mimics[c] - self.classes[c])
            if not to_class < np.linalg.norm(self.normal - self.classes[c]):
                raise GenerationException(
                    f"mimic prototype of class {c} is not closer to it than the normal prototype"
                )

    def center(self, truth: int, mimic: int) -> np.ndarray:
        if truth > 0:
            return self.classes[truth]
        if mimic > 0:
            return self.mimics[mimic]
        return self.normal


def _check_feasible(spec: CohortSpec) -> None:
    min_size = spec.bag_size_range[0]
    lo = spec.positive_fraction_range[0]
    if lo * min_size < 1.0:
        raise GenerationException(
            f"positive fraction {lo} of the smallest bag ({min_size}) leaves no positive instance"
        )


def _bag_labels(rng: np.random.Generator, spec: CohortSpec, label: int, size: int) -> tuple:
    """Truth labels and mimic classes for one bag, before shuffling."""
    n = spec.n_classes
    truth = np.zeros(size, dtype=np.int64)
    mimic = np.zeros(size, dtype=np.int64)

    n_pos = 0
    if label > 0:
        frac = rng.uniform(*spec.positive_fraction_range)
        n_pos = min(size, max(1, int(np.floor(frac * size + 1e-9))))
        n_lower = int(np.floor(LOWER_CLASS_SHARE * n_pos)) if label >= 2 else 0
        n_lower = min(n_lower, n_pos - 1)
        truth[:n_pos] = label
        if n_lower > 0:
            truth[1 : 1 + n_lower] = rng.integers(1, label, size=n_lower)

    m_frac = rng.uniform(*spec.mimic_fraction_range)
    n_mimic = min(size - n_pos, int(np.floor(m_frac * size)))
    if n_mimic > 0:
        mimic[n_pos : n_pos + n_mimic] = rng.integers(1, n, size=n_mimic)
    return truth, mimic


def generate_cohort(spec: CohortSpec) -> List[Bag]:
    """
    Generate a synthetic cohort.

    Args:
        spec: Cohort parameters

    Returns:
        List[Bag]: Bags ordered by class, all in the train split

    Raises:
        GenerationException: If the cohort parameters cannot be realised
    """
    _check_feasible(spec)
    protos = Prototypes(spec)
    rng = make_rng(spec.seed, _BAG_STREAM)
    lo, hi = spec.bag_size_range

    bags: List[Bag] = []
    for label, count in enumerate(spec.bags_per_class):
        for _ in range(count):
            size = int(rng.integers(lo, hi + 1))
            truth, mimic = _bag_labels(rng, spec, label, size)
            order = rng.permutation(size)
            truth, mimic = truth[order], mimic[order]
            centers = np.vstack([protos.center(int(t), int(m)) for t, m in zip(truth, mimic)])
            noise = rng.normal(0.0, spec.noise_sigma, size=centers.shape)
            bags.append(
                Bag(
                    slide_id=f"bag{len(bags):05d}",
                    label=label,
                    raw=to_float32_grid(centers + noise),
                    truth_labels=truth,
                    mimic_of=mimic,
                )
            )

    verify_mimics(bags, protos)
    logger.info(
        "Cohort generated",
        bags=len(bags),
        instances=sum(len(b) for b in bags),
        n_classes=spec.n_classes,
        seed=spec.seed,
    )
    return bags


def verify_mimics(bags: Sequence[Bag], protos: Prototypes) -> None:
    """
    Check that planted mimics of class c sit closer to its prototype than pure-normal instances.

    The check compares mean Euclidean distances per class. Single noisy draws of the
    two groups may overlap; the prototypes themselves are checked strictly when built.

    Raises:
        GenerationException: If the mimics of some class are not closer on average
    """
    raw = np.vstack([b.raw for b in bags])
    truth = np.concatenate([b.truth_labels for b in bags])
    mimic = np.concatenate([b.mimic_of for b in bags])
    normal = (truth == 0) & (mimic == 0)
    for c, center in protos.classes.items():
        planted = mimic == c
        if not planted.any() or not normal.any():
            continue
        d_mimic = np.linalg.norm(raw[planted] - center, axis=1).mean()
        d_normal = np.linalg.norm(raw[normal] - center, axis=1).mean()
        if not d_mimic < d_normal:
            raise GenerationException(
                f"mimics of class {c} are not closer to its prototype than normal instances "
                f"({d_mimic:.3f} vs {d_normal:.3f})"
            )


def allocate(count: int, ratios: Sequence[float]) -> List[int]:
    """
    Split ``count`` items by ``ratios`` with largest-remainder rounding.

    Every part with a nonzero ratio gets at least one item.

    Raises:
        ArgumentException: If a nonzero part cannot be filled
    """
    quotas = [r * count for r in ratios]
    sizes = [int(np.floor(q + 1e-9)) for q in quotas]
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(quotas[i] - sizes[i]), i)
    )
    for i in remainders[: max(0, count - sum(sizes))]:
        sizes[i] += 1
    for i, r in enumerate(ratios):
        if r > 0 and sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j], -j))
            if sizes[donor] <= 1:
                raise ArgumentException(f"cannot give part {i} an item out of {count}")
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def split_cohort(bags: Sequence[Bag], ratios: Sequence[float], seed: int) -> List[Bag]:
    """
    Assign splits stratified by bag label.

    Args:
        bags: Cohort
        ratios: Train, val (and optionally test) shares summing to 1
        seed: Shuffle seed

    Returns:
        List[Bag]: Bags in input order with ``split`` set

    Raises:
        ArgumentException: If ratios are invalid
        StratificationException: If a class has fewer bags than nonzero parts
    """
    if not 1 <= len(ratios) <= 3 or any(r < 0 for r in ratios):
        raise ArgumentException(f"invalid split ratios {list(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ArgumentException(f"split ratios {list(ratios)} do not sum to 1")
    parts = [Split.TRAIN, Split.VAL, Split.TEST][: len(ratios)]
    n_parts = sum(1 for r in ratios if r > 0)

    by_label: Dict[int, List[int]] = {}
    for pos, bag in enumerate(bags):
        by_label.setdefault(bag.label, []).append(pos)

    assigned: Dict[int, Split] = {}
    for label in sorted(by_label):
        members = by_label[label]
        if len(members) < n_parts:
            raise StratificationException(label, len(members), n_parts)
        order = make_rng(seed, _SPLIT_STREAM, label).permutation(len(members))
        sizes = allocate(len(members), ratios)
        start = 0
        for part, size in zip(parts, sizes):
            for k in order[start : start + size]:
                assigned[members[int(k)]] = part
            start += size

    result = [bag.with_split(assigned[pos]) for pos, bag in enumerate(bags)]
    logger.info(
        "Cohort split",
        seed=seed,
        **{p.value: sum(1 for b in result if b.split == p) for p in parts},
    )
    return result
