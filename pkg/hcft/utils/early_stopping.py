"""
Patience-based early stopping.
"""

import math
from typing import Optional


class EarlyStopping:
    """
    Track the best value seen and count non-improving updates.

    Training stops once more than ``patience`` consecutive updates fail to
    improve on the best value, so ``patience=0`` stops at the first
    non-improving update.
    """

    def __init__(self, patience: int, mode: str = "min"):
        if mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {mode}")
        self.patience = patience
        self.mode = mode
        self.best: Optional[float] = None
        self.best_step = -1
        self.bad_steps = 0
        self.step = -1

    def update(self, value: Optional[float]) -> bool:
        """
        Record one value.

        Args:
            value: Monitored quantity; ``None`` or NaN never improves

        Returns:
            bool: True when the value is a new best
        """
        self.step += 1
        valid = value is not None and not math.isnan(value)
        improved = valid and (
            self.best is None
            or (value < self.best if self.mode == "min" else value > self.best)
        )
        if improved:
            self.best = value
            self.best_step = self.step
            self.bad_steps = 0
        else:
            self.bad_steps += 1
        return bool(improved)

    @property
    def should_stop(self) -> bool:
        return self.bad_steps > self.patience
