"""
Bag and instance models.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from hcft.utils.exceptions import DataException, DimensionMismatchException


class Split(str, Enum):
    """Cohort partition a bag belongs to."""

    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True, order=True)
class InstanceRef:
    """Stable identity of one patch."""

    slide_id: str
    patch_index: int

    def __str__(self) -> str:
        return f"{self.slide_id}#{self.patch_index}"


@dataclass(frozen=True)
class InstanceRecord:
    """One patch with its current embedding and labels."""

    slide_id: str
    patch_index: int
    raw: np.ndarray
    embedding: Optional[np.ndarray]
    pseudo_label: int = -1
    # evaluation only
    truth_label: Optional[int] = None

    @property
    def ref(self) -> InstanceRef:
        return InstanceRef(self.slide_id, self.patch_index)


@dataclass(frozen=True, eq=False)
class Bag:
    """
    One slide: raw patch vectors, current embeddings and the bag label.

    ``truth_labels`` and ``mimic_of`` are evaluation-only companions; training
    paths never read them. ``truth_labels`` uses -1 for unknown.
    """

    slide_id: str
    label: int
    raw: np.ndarray
    embeddings: Optional[np.ndarray] = None
    truth_labels: Optional[np.ndarray] = None
    mimic_of: Optional[np.ndarray] = None
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        if self.raw.ndim != 2 or self.raw.shape[0] < 1:
            raise DataException(f"bag {self.slide_id} needs at least one instance")
        if self.label < 0:
            raise DataException(f"bag {self.slide_id} has negative label {self.label}")
        n = self.raw.shape[0]
        if self.embeddings is not None and self.embeddings.shape[0] != n:
            raise DimensionMismatchException(
                f"bag {self.slide_id} embeddings", self.raw.shape, self.embeddings.shape
            )
        for name in ("truth_labels", "mimic_of"):
            companion = getattr(self, name)
            if companion is not None and companion.shape != (n,):
                raise DimensionMismatchException(
                    f"bag {self.slide_id} {name}", (n,), companion.shape
                )
        if self.truth_labels is not None and np.any(self.truth_labels > self.label):
            raise DataException(
                f"bag {self.slide_id} has an instance truth label above bag label {self.label}"
            )

    def __len__(self) -> int:
        return int(self.raw.shape[0])

    @property
    def has_truth(self) -> bool:
        return self.truth_labels is not None and bool(np.all(self.truth_labels >= 0))

    def require_embeddings(self) -> np.ndarray:
        """Return embeddings or fail if no encoder has run yet."""
        if self.embeddings is None:
            raise DataException(f"bag {self.slide_id} has no embeddings; run an encoder first")
        return self.embeddings

    def ref(self, k: int) -> InstanceRef:
        return InstanceRef(self.slide_id, k)

    def refs(self) -> List[InstanceRef]:
        return [InstanceRef(self.slide_id, k) for k in range(len(self))]

    def instance(self, k: int, pseudo_label: int = -1) -> InstanceRecord:
        truth = None
        if self.truth_labels is not None and self.truth_labels[k] >= 0:
            truth = int(self.truth_labels[k])
        return InstanceRecord(
            slide_id=self.slide_id,
            patch_index=k,
            raw=self.raw[k],
            embedding=None if self.embeddings is None else self.embeddings[k],
            pseudo_label=pseudo_label,
            truth_label=truth,
        )

    @property
    def instances(self) -> List[InstanceRecord]:
        return [self.instance(k) for k in range(len(self))]

    def with_embeddings(self, embeddings: np.ndarray) -> "Bag":
        return replace(self, embeddings=embeddings)

    def with_split(self, split: Split) -> "Bag":
        return replace(self, split=Split(split))

    def without_truth(self) -> "Bag":
        return replace(self, truth_labels=None, mimic_of=None)

    def same_as(self, other: "Bag") -> bool:
        """Exact equality including every float bit."""

        def eq(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.slide_id == other.slide_id
            and self.label == other.label
            and self.split == other.split
            and eq(self.raw, other.raw)
            and eq(self.embeddings, other.embeddings)
            and eq(self.truth_labels, other.truth_labels)
            and eq(self.mimic_of, other.mimic_of)
        )


def bags_in_split(bags: Iterable[Bag], split: Split) -> List[Bag]:
    return [b for b in bags if b.split == Split(split)]


class CohortIndex:
    """Lookup from instance refs to their bag and row."""

    def __init__(self, bags: Sequence[Bag]):
        self.bags: List[Bag] = list(bags)
        self._by_slide: Dict[str, int] = {}
        for pos, bag in enumerate(self.bags):
            if bag.slide_id in self._by_slide:
                raise DataException(f"duplicate slide id {bag.slide_id}")
            self._by_slide[bag.slide_id] = pos

    def locate(self, ref: InstanceRef) -> Tuple[Bag, int]:
        try:
            bag = self.bags[self._by_slide[ref.slide_id]]
        except KeyError as e:
            raise DataException(f"unknown slide {ref.slide_id}") from e
        if not 0 <= ref.patch_index < len(bag):
            raise DataException(f"unknown instance {ref}")
        return bag, ref.patch_index

    def bag(self, slide_id: str) -> Bag:
        return self.bags[self._by_slide[slide_id]]

    def bag_label(self, ref: InstanceRef) -> int:
        return self.locate(ref)[0].label

    def embeddings(self, refs: Sequence[InstanceRef]) -> np.ndarray:
        rows = []
        for ref in refs:
            bag, k = self.locate(ref)
            rows.append(bag.require_embeddings()[k])
        if not rows:
            return np.zeros((0, 0))
        return np.vstack(rows)

    def raw(self, refs: Sequence[InstanceRef]) -> np.ndarray:
        rows = [self.locate(ref)[0].raw[ref.patch_index] for ref in refs]
        if not rows:
            return np.zeros((0, 0))
        return np.vstack(rows)

    def truth(self, ref: InstanceRef) -> Optional[int]:
        bag, k = self.locate(ref)
        if bag.truth_labels is None or bag.truth_labels[k] < 0:
            return None
        return int(bag.truth_labels[k])

    def mimic(self, ref: InstanceRef) -> int:
        bag, k = self.locate(ref)
        return 0 if bag.mimic_of is None else int(bag.mimic_of[k])
