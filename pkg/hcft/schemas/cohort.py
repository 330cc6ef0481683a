"""
Synthetic cohort parameters.
"""

from typing import Any, List, Tuple

from pydantic import BaseModel, Field, model_validator


class CohortSpec(BaseModel):
    """Parameters of a synthetic cohort of bags."""

    n_classes: int = Field(2, ge=2)
    bags_per_class: List[int] = Field(default_factory=lambda: [50, 50])
    bag_size_range: Tuple[int, int] = (50, 150)
    positive_fraction_range: Tuple[float, float] = (0.1, 0.3)
    mimic_fraction_range: Tuple[float, float] = (0.2, 0.2)
    d_raw: int = Field(32, ge=1)
    class_prototype_separation: float = Field(4.0, gt=0.0)
    noise_sigma: float = Field(1.0, ge=0.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def broadcast_bags_per_class(cls, data: Any) -> Any:
        """Allow a single count for every class."""
        if isinstance(data, dict) and isinstance(data.get("bags_per_class"), int):
            data = dict(data)
            data["bags_per_class"] = [data["bags_per_class"]] * int(data.get("n_classes", 2))
        return data

    @model_validator(mode="after")
    def validate_ranges(self) -> "CohortSpec":
        """Validate that every range is nonempty and in bounds."""
        if len(self.bags_per_class) != self.n_classes:
            raise ValueError(
                f"bags_per_class has {len(self.bags_per_class)} entries for {self.n_classes} classes"
            )
        if any(c < 1 for c in self.bags_per_class):
            raise ValueError("every class needs at least one bag")
        lo, hi = self.bag_size_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bag_size_range {self.bag_size_range} is empty")
        for name in ("positive_fraction_range", "mimic_fraction_range"):
            lo_f, hi_f = getattr(self, name)
            if not 0.0 <= lo_f <= hi_f <= 1.0:
                raise ValueError(f"{name} {getattr(self, name)} must satisfy 0 <= lo <= hi <= 1")
        return self


class CohortRecipe(BaseModel):
    """Everything a generated cohort depends on: its parameters and split ratios."""

    spec: CohortSpec
    split_ratios: Tuple[float, float, float]
