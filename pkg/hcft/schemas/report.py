"""
Per-round and sweep report schemas.

Reports serialize to ``metric,value`` rows. Floats are written with ``repr`` so
reruns with the same seeds produce byte-identical files; undefined values are
written as ``NA``.
"""

import re
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

NA = "NA"

_HIST_KEY = re.compile(r"^dstar_class_(\d+)$")


def format_value(value: object) -> str:
    """Render one report cell."""
    if value is None:
        return NA
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RoundReport(BaseModel):
    """Everything measured in one completed round."""

    round: int = Field(..., ge=0)
    # bag level
    val_acc: Optional[float] = None
    val_auc: Optional[float] = None
    val_f1: Optional[float] = None
    test_acc: Optional[float] = None
    test_auc: Optional[float] = None
    test_f1: Optional[float] = None
    # patch level, MIL instance score and fine-tuned patch head
    mil_patch_acc: Optional[float] = None
    mil_patch_auc: Optional[float] = None
    mil_patch_f1: Optional[float] = None
    mil_cpm: Optional[float] = None
    head_patch_acc: Optional[float] = None
    head_patch_auc: Optional[float] = None
    head_patch_f1: Optional[float] = None
    head_cpm: Optional[float] = None
    # refinement set sizes (round 0 has none)
    k_total: Optional[int] = None
    n_high: Optional[int] = None
    n_low: Optional[int] = None
    n_original: Optional[int] = None
    n_middle_l: Optional[int] = None
    n_middle_h: Optional[int] = None
    n_final: Optional[int] = None
    n_cleaned_high: Optional[int] = None
    dstar_size: Optional[int] = None
    dstar_histogram: List[int] = Field(default_factory=list)
    # truth audits, evaluation only
    purity_high: Optional[float] = None
    purity_cleaned: Optional[float] = None
    mimic_precision: Optional[float] = None
    mimic_recall: Optional[float] = None
    mimic_base_rate: Optional[float] = None
    # training
    mil_epochs: int = 0
    mil_best_val_loss: Optional[float] = None
    enc_epochs: Optional[int] = None
    enc_best_val_loss: Optional[float] = None
    n_warnings: int = 0

    @property
    def selection_auc(self) -> Optional[float]:
        """Validation bag AUC used for round-level early stopping."""
        return self.val_auc

    def to_rows(self) -> List[Tuple[str, str]]:
        """Flatten to ``(metric, value)`` pairs in field order."""
        rows: List[Tuple[str, str]] = []
        for key in type(self).model_fields:
            value = getattr(self, key)
            if key == "dstar_histogram":
                rows.extend((f"dstar_class_{c}", str(n)) for c, n in enumerate(value))
            else:
                rows.append((key, format_value(value)))
        return rows

    def to_flat(self) -> Dict[str, str]:
        return dict(self.to_rows())

    @classmethod
    def from_rows(cls, rows: List[Tuple[str, str]]) -> "RoundReport":
        """Inverse of :meth:`to_rows`."""
        data: Dict[str, object] = {}
        hist: Dict[int, int] = {}
        for key, text in rows:
            match = _HIST_KEY.match(key)
            if match:
                hist[int(match.group(1))] = int(text)
                continue
            if key not in cls.model_fields:
                continue
            data[key] = None if text == NA else text
        data["dstar_histogram"] = [hist[c] for c in sorted(hist)]
        return cls.model_validate(data)


class SweepRow(BaseModel):
    """Final-round outcome of one sweep cell."""

    k0: int
    clusters: int
    seed: int
    rounds: int = 0
    test_acc: Optional[float] = None
    test_auc: Optional[float] = None
    test_f1: Optional[float] = None
    mil_cpm: Optional[float] = None
    head_cpm: Optional[float] = None
    status: str = "ok"

    @classmethod
    def header(cls) -> List[str]:
        return list(cls.model_fields)

    def cells(self) -> List[str]:
        return [format_value(getattr(self, key)) for key in type(self).model_fields]

    @classmethod
    def from_cells(cls, cells: Dict[str, str]) -> "SweepRow":
        data = {k: (None if v == NA else v) for k, v in cells.items() if k in cls.model_fields}
        return cls.model_validate(data)


class SweepSummaryRow(BaseModel):
    """Mean and standard deviation over the seeds of one (K0, C) cell."""

    k0: int
    clusters: int
    n_runs: int
    n_failed: int
    test_auc_mean: Optional[float] = None
    test_auc_std: Optional[float] = None
    test_acc_mean: Optional[float] = None
    test_acc_std: Optional[float] = None
    test_f1_mean: Optional[float] = None
    test_f1_std: Optional[float] = None

    @classmethod
    def header(cls) -> List[str]:
        return list(cls.model_fields)

    def cells(self) -> List[str]:
        return [format_value(getattr(self, key)) for key in type(self).model_fields]


__all__ = [
    "NA",
    "RoundReport",
    "SweepRow",
    "SweepSummaryRow",
    "format_value",
]
