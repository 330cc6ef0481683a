"""
Confidence service: class-wise confidence, dynamic top-K schedule and
pseudo-label initialisation.
"""

import math
from typing import List, Sequence, Tuple

import numpy as np

from hcft.core.logging import get_logger
from hcft.models.bag import Bag
from hcft.models.mil import MILModel
from hcft.models.refinement import BagConfidence, ConfidenceTable, LabeledSet, SplitSets

logger = get_logger(__name__)


def confidence_scores(model: MILModel, bag: Bag) -> np.ndarray:
    """
    Attention times the bag-label probability of each instance.

    Args:
        model: Trained MIL model
        bag: Bag with embeddings

    Returns:
        np.ndarray: Nonnegative scores, one per instance
    """
    return bag_confidence(model, bag, t=0, k0=1).scores


def kt_raw(t: int, n: int, k0: int) -> float:
    """Unclamped schedule value ``min((t+1) K0 log10 N, N/3)``."""
    return min((t + 1) * k0 * math.log10(n), n / 3.0)


def kt_schedule(t: int, n: int, k0: int) -> int:
    """
    Per-bag number of high-confidence instances at iteration ``t``.

    The schedule value is rounded half up, capped at ``floor(N/3)`` and
    clamped to ``[1, N]``.
    """
    k = min(math.floor(kt_raw(t, n, k0) + 0.5), n // 3)
    return max(1, min(k, n))


def descending_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, ties by ascending index."""
    return np.lexsort((np.arange(scores.size), -scores))


def bag_confidence(model: MILModel, bag: Bag, t: int, k0: int) -> BagConfidence:
    fwd = model.forward(bag.require_embeddings())
    p_label = fwd.instance_probs[:, bag.label]
    scores = fwd.attention * p_label
    return BagConfidence(
        slide_id=bag.slide_id,
        label=bag.label,
        attention=fwd.attention,
        p_label=p_label,
        scores=scores,
        order=descending_order(scores),
        k_t=kt_schedule(t, len(bag), k0),
    )


def confidence_table(model: MILModel, bags: Sequence[Bag], t: int, k0: int) -> ConfidenceTable:
    return ConfidenceTable(
        bags={b.slide_id: bag_confidence(model, b, t, k0) for b in bags}, t=t, k0=k0
    )


def init_pseudo_labels(
    model: MILModel, bags_train: Sequence[Bag], t: int, k0: int
) -> Tuple[SplitSets, ConfidenceTable]:
    """
    Split every training bag into high- and low-confidence instances.

    The ``K_t`` highest-scoring instances of a bag take the bag label; the
    rest are unassigned (-1).

    Args:
        model: Trained MIL model
        bags_train: Training bags with embeddings
        t: Iteration index of the schedule
        k0: Schedule base ``K_0``

    Returns:
        Tuple[SplitSets, ConfidenceTable]: The split and the scores behind it
    """
    table = confidence_table(model, bags_train, t, k0)
    high: LabeledSet = {}
    low: LabeledSet = {}
    for bag in bags_train:
        conf = table.bags[bag.slide_id]
        top = set(int(k) for k in conf.top)
        for k in range(len(bag)):
            if k in top:
                high[bag.ref(k)] = bag.label
            else:
                low[bag.ref(k)] = -1
    logger.info("Pseudo labels initialised", t=t, k0=k0, high=len(high), low=len(low))
    return SplitSets(high=high, low=low), table


def confidence_rows(table: ConfidenceTable) -> List[Tuple[str, int, float, float, float, int]]:
    """``slide_id,patch_index,attention,p_Y,score,rank`` rows; rank 1 is the top score."""
    rows = []
    for slide_id in sorted(table.bags):
        conf = table.bags[slide_id]
        ranks = conf.ranks
        for k in range(conf.scores.size):
            rows.append(
                (
                    slide_id,
                    k,
                    float(conf.attention[k]),
                    float(conf.p_label[k]),
                    float(conf.scores[k]),
                    int(ranks[k]) + 1,
                )
            )
    return rows
