"""
Numeric domain models.
"""

from .bag import Bag, CohortIndex, InstanceRecord, InstanceRef, Split
from .cluster import ClassClusterSets, ClusterModel
from .encoder import EncoderModel
from .mil import BagForward, MILModel
from .refinement import (
    BagConfidence,
    ConfidenceTable,
    PatchDataset,
    PatchEntry,
    PatchSource,
    RefinementState,
    SplitSets,
)

__all__ = [
    "Bag",
    "CohortIndex",
    "InstanceRecord",
    "InstanceRef",
    "Split",
    "ClusterModel",
    "ClassClusterSets",
    "EncoderModel",
    "MILModel",
    "BagForward",
    "BagConfidence",
    "ConfidenceTable",
    "SplitSets",
    "RefinementState",
    "PatchDataset",
    "PatchEntry",
    "PatchSource",
]
