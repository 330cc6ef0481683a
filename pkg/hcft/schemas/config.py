"""
Run configuration.

Every field doubles as a config-file key and a CLI flag (``--k0``,
``--bag-size-min``...). Descriptions feed ``--help``.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from hcft.schemas.cohort import CohortRecipe, CohortSpec
from hcft.schemas.training import EncoderHyper, MILHyper
from hcft.utils.exceptions import ConfigurationException


class RunConfig(BaseModel):
    """All knobs of one HC-FT run."""

    model_config = ConfigDict(extra="forbid")

    # Run
    name: str = Field("hcft", description="run name; output goes to <runs_dir>/<name>")
    runs_dir: Path = Field(Path("runs"), description="directory holding run folders")
    cohort_path: Optional[Path] = Field(
        None, description="load this cohort directory instead of generating one"
    )
    seed: int = Field(0, ge=0, description="seed of every training stage")

    # Cohort
    n_classes: int = Field(2, ge=2, description="number of bag classes n (0 = non-tumor)")
    bags_per_class: List[int] = Field(
        default_factory=lambda: [50, 50], description="bags generated per class, comma separated"
    )
    bag_size_min: int = Field(50, ge=1, description="smallest bag size")
    bag_size_max: int = Field(150, ge=1, description="largest bag size")
    positive_fraction_min: float = Field(0.1, ge=0.0, le=1.0, description="lowest tumor share of a positive bag")
    positive_fraction_max: float = Field(0.3, ge=0.0, le=1.0, description="highest tumor share of a positive bag")
    mimic_fraction_min: float = Field(0.2, ge=0.0, le=1.0, description="lowest share of planted hard negatives")
    mimic_fraction_max: float = Field(0.2, ge=0.0, le=1.0, description="highest share of planted hard negatives")
    d_raw: int = Field(32, ge=1, description="raw patch vector width")
    d_emb: int = Field(16, ge=1, description="embedding width")
    separation: float = Field(4.0, gt=0.0, description="distance between normal and class prototypes")
    noise_sigma: float = Field(1.0, ge=0.0, description="per-coordinate instance noise")
    data_seed: int = Field(0, ge=0, description="seed of the synthetic cohort")

    # Split
    train_ratio: float = Field(0.6, ge=0.0, le=1.0, description="share of bags per class used for training")
    val_ratio: float = Field(0.2, ge=0.0, le=1.0, description="share of bags per class used for validation")
    test_ratio: float = Field(0.2, ge=0.0, le=1.0, description="share of bags per class held out for testing")

    # Heuristic clustering
    k0: int = Field(10, ge=1, description="K_0 of the dynamic top-K schedule")
    clusters: int = Field(5, ge=1, description="number of K-means clusters C")
    theta: float = Field(0.5, gt=0.0, le=1.0, description="cluster purity threshold of cluster classification")
    kmeans_restarts: int = Field(10, ge=1, description="independent K-means restarts")
    kmeans_max_iter: int = Field(300, ge=1, description="Lloyd iteration cap")
    enable_mining: bool = Field(True, description="mine potential negatives from the low-confidence set")
    enable_searching: bool = Field(True, description="search hard negatives inside the high-confidence set")
    enable_cleaning: bool = Field(True, description="drop positives whose cluster disagrees with the bag label")

    # Rounds
    iterations: int = Field(3, ge=0, description="refinement rounds T after the round-0 baseline")
    round_patience: int = Field(2, ge=0, description="rounds without val bag-AUC gain before stopping")

    # MIL aggregator
    d_att: int = Field(8, ge=1, description="gated attention width")
    d_hid: int = Field(16, ge=1, description="bag classifier hidden width")
    mil_lr_max: float = Field(1e-3, gt=0.0, description="initial MIL learning rate")
    mil_lr_min: float = Field(1e-4, gt=0.0, description="minimum MIL learning rate (cosine floor)")
    mil_max_epochs: int = Field(200, ge=0, description="MIL epoch cap")
    mil_patience: int = Field(20, ge=0, description="MIL early-stopping patience on val loss")
    mil_warm_start: bool = Field(False, description="retrain MIL from the previous round's weights")

    # Encoder
    encoder_init_scale: float = Field(1.0, gt=0.0, description="scale of the random round-0 trunk")
    enc_lr: float = Field(5e-5, gt=0.0, description="encoder fine-tuning learning rate")
    enc_batch_size: int = Field(64, ge=1, description="encoder fine-tuning batch size")
    enc_max_epochs: int = Field(200, ge=0, description="encoder epoch cap")
    enc_patience: int = Field(20, ge=0, description="encoder early-stopping patience on val loss")
    enc_val_fraction: float = Field(0.2, ge=0.0, lt=1.0, description="share of D* held out to validate fine-tuning")
    reset_encoder: bool = Field(False, description="fine-tune from the round-0 encoder every round")

    @model_validator(mode="before")
    @classmethod
    def default_bags_per_class(cls, data: Any) -> Any:
        """Fifty bags per class unless counts are given."""
        if isinstance(data, dict) and "bags_per_class" not in data and "n_classes" in data:
            data = dict(data)
            data["bags_per_class"] = [50] * int(data["n_classes"])
        return data

    @field_validator("cohort_path", mode="before")
    @classmethod
    def blank_cohort_path(cls, v: Any) -> Any:
        """An empty value means generate a cohort."""
        if isinstance(v, str) and not v.strip():
            return None
        return v

    @field_validator("bags_per_class", mode="before")
    @classmethod
    def parse_bags_per_class(cls, v: Any, info: ValidationInfo) -> Any:
        """Parse a comma separated list; a single count applies to every class."""
        if isinstance(v, str):
            v = [int(x) for x in v.split(",") if x.strip()]
        if isinstance(v, int):
            v = [v]
        n_classes = info.data.get("n_classes")
        if isinstance(v, list) and len(v) == 1 and n_classes:
            v = v * int(n_classes)
        return v

    @model_validator(mode="after")
    def validate_consistency(self) -> "RunConfig":
        """Validate cross-field constraints."""
        if len(self.bags_per_class) != self.n_classes:
            raise ValueError("bags_per_class needs one count per class")
        if self.bag_size_min > self.bag_size_max:
            raise ValueError("bag_size_min exceeds bag_size_max")
        if self.positive_fraction_min > self.positive_fraction_max:
            raise ValueError("positive_fraction_min exceeds positive_fraction_max")
        if self.mimic_fraction_min > self.mimic_fraction_max:
            raise ValueError("mimic_fraction_min exceeds mimic_fraction_max")
        if abs(self.train_ratio + self.val_ratio + self.test_ratio - 1.0) > 1e-9:
            raise ValueError("train_ratio + val_ratio + test_ratio must equal 1")
        if self.mil_lr_min > self.mil_lr_max:
            raise ValueError("mil_lr_min exceeds mil_lr_max")
        return self

    @classmethod
    def from_sources(cls, *layers: Mapping[str, Any]) -> "RunConfig":
        """
        Merge layers (later wins) and validate.

        Raises:
            ConfigurationException: On unknown keys or invalid values
        """
        merged: Dict[str, Any] = {}
        for layer in layers:
            merged.update({k.replace("-", "_"): v for k, v in layer.items() if v is not None})
        try:
            return cls.model_validate(merged)
        except ValidationError as e:
            raise ConfigurationException(_format_validation_error(e)) from e

    @property
    def split_ratios(self) -> Tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    @property
    def run_dir(self) -> Path:
        return Path(self.runs_dir) / self.name

    def cohort_spec(self) -> CohortSpec:
        return CohortSpec(
            n_classes=self.n_classes,
            bags_per_class=list(self.bags_per_class),
            bag_size_range=(self.bag_size_min, self.bag_size_max),
            positive_fraction_range=(self.positive_fraction_min, self.positive_fraction_max),
            mimic_fraction_range=(self.mimic_fraction_min, self.mimic_fraction_max),
            d_raw=self.d_raw,
            class_prototype_separation=self.separation,
            noise_sigma=self.noise_sigma,
            seed=self.data_seed,
        )

    def cohort_recipe(self) -> CohortRecipe:
        return CohortRecipe(spec=self.cohort_spec(), split_ratios=self.split_ratios)

    def mil_hyper(self) -> MILHyper:
        return MILHyper(
            d_att=self.d_att,
            d_hid=self.d_hid,
            lr_max=self.mil_lr_max,
            lr_min=self.mil_lr_min,
            max_epochs=self.mil_max_epochs,
            patience=self.mil_patience,
        )

    def encoder_hyper(self) -> EncoderHyper:
        return EncoderHyper(
            lr=self.enc_lr,
            batch_size=self.enc_batch_size,
            max_epochs=self.enc_max_epochs,
            patience=self.enc_patience,
            val_fraction=self.enc_val_fraction,
        )

    def echo(self) -> str:
        """Render as ``key = value`` lines in declaration order."""
        lines = []
        for key in type(self).model_fields:
            lines.append(f"{key} = {_render(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def help_lines(cls) -> List[str]:
        lines = []
        for key, info in cls.model_fields.items():
            default = info.get_default(call_default_factory=True)
            lines.append(f"{key} (default {_render(default)}): {info.description}")
        return lines


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "config"
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)
