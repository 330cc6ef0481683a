"""
Trainer hyper-parameters and training histories.
"""

from typing import List, Tuple

from pydantic import BaseModel, Field


class MILHyper(BaseModel):
    """Gated-attention MIL training hyper-parameters (batch = one bag)."""

    d_att: int = Field(8, ge=1)
    d_hid: int = Field(16, ge=1)
    lr_max: float = Field(1e-3, gt=0.0)
    lr_min: float = Field(1e-4, gt=0.0)
    max_epochs: int = Field(200, ge=0)
    patience: int = Field(20, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


class EncoderHyper(BaseModel):
    """Encoder fine-tuning hyper-parameters."""

    lr: float = Field(5e-5, gt=0.0)
    batch_size: int = Field(64, ge=1)
    max_epochs: int = Field(200, ge=0)
    patience: int = Field(20, ge=0)
    val_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


class TrainingHistory(BaseModel):
    """Per-epoch losses and the early-stopping outcome."""

    train_loss: List[float] = Field(default_factory=list)
    val_loss: List[float] = Field(default_factory=list)
    val_accuracy: List[float] = Field(default_factory=list)
    lr: List[float] = Field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    warnings: List[str] = Field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        if self.best_epoch < 0:
            return float("nan")
        return self.val_loss[self.best_epoch]
