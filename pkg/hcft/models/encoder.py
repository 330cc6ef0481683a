"""
Patch encoder: an affine+tanh trunk producing embeddings and a (2n-1)-way head.
"""

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from hcft.core import ndmath
from hcft.core.ndmath import Activation, LayerGrads
from hcft.utils.exceptions import ContractViolationException, DimensionMismatchException

PARAM_NAMES: Tuple[str, ...] = ("W", "b", "Wh", "bh")


def patch_class_count(n_classes: int) -> int:
    """n positive classes plus n-1 hard-negative classes."""
    return 2 * n_classes - 1


@dataclass(frozen=True, eq=False)
class EncoderModel:
    """Trunk ``tanh(raw W + b)`` and head ``emb Wh + bh``."""

    W: np.ndarray
    b: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray

    def __post_init__(self) -> None:
        if self.b.shape != (self.W.shape[1],):
            raise DimensionMismatchException("EncoderModel trunk", self.W.shape, self.b.shape)
        if self.Wh.shape[0] != self.W.shape[1] or self.bh.shape != (self.Wh.shape[1],):
            raise DimensionMismatchException("EncoderModel head", self.Wh.shape, self.bh.shape)
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractViolationException(f"EncoderModel parameter {name} is not finite")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d_raw: int,
        d_emb: int,
        n_classes: int,
        scale: float = 1.0,
    ) -> "EncoderModel":
        """Random trunk (the round-0 stand-in for a pre-trained encoder) and head."""
        k = patch_class_count(n_classes)
        return cls(
            W=rng.normal(0.0, scale / np.sqrt(d_raw), size=(d_raw, d_emb)),
            b=np.zeros(d_emb),
            Wh=rng.normal(0.0, 1.0 / np.sqrt(d_emb), size=(d_emb, k)),
            bh=np.zeros(k),
        )

    @classmethod
    def identity(cls, d: int, n_classes: int) -> "EncoderModel":
        """Square identity trunk; embeddings equal ``tanh(raw)``."""
        k = patch_class_count(n_classes)
        return cls(W=np.eye(d), b=np.zeros(d), Wh=np.zeros((d, k)), bh=np.zeros(k))

    @property
    def d_raw(self) -> int:
        return int(self.W.shape[0])

    @property
    def d_emb(self) -> int:
        return int(self.W.shape[1])

    @property
    def n_outputs(self) -> int:
        return int(self.Wh.shape[1])

    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name).copy() for name in PARAM_NAMES}

    @classmethod
    def from_parameters(cls, params: Dict[str, np.ndarray]) -> "EncoderModel":
        return cls(**{name: np.array(params[name], dtype=np.float64) for name in PARAM_NAMES})

    def _check(self, raw: np.ndarray) -> np.ndarray:
        X = ndmath.as_matrix(raw, "raw")
        if X.shape[1] != self.d_raw:
            raise DimensionMismatchException("encoder input", X.shape, self.W.shape)
        return X

    def trunk(self, raw: np.ndarray) -> np.ndarray:
        X = self._check(raw)
        return ndmath.activation(ndmath.affine(X, self.W, self.b), Activation.TANH)

    def extract(self, raw: np.ndarray) -> np.ndarray:
        """Embeddings rounded to the float32 grid the embedding store keeps."""
        return self.trunk(raw).astype(np.float32).astype(np.float64)

    def logits(self, raw: np.ndarray) -> np.ndarray:
        return ndmath.affine(self.trunk(raw), self.Wh, self.bh)

    def predict_proba(self, raw: np.ndarray) -> np.ndarray:
        return ndmath.softmax_rows(self.logits(raw))

    def loss_and_grads(
        self,
        raw: np.ndarray,
        targets: Sequence[int],
        classes: Sequence[int] | None = None,
    ) -> Tuple[float, LayerGrads]:
        """
        Cross-entropy over the head and its gradient.

        Args:
            raw: (rows, D_raw) patch vectors
            targets: Patch class per row
            classes: Head columns taking part in the softmax; all when omitted

        Returns:
            Tuple of (loss, gradients)
        """
        X = self._check(raw)
        cols = np.arange(self.n_outputs) if classes is None else np.asarray(classes, dtype=np.int64)
        remap = {int(c): i for i, c in enumerate(cols)}
        try:
            local = np.array([remap[int(t)] for t in targets], dtype=np.int64)
        except KeyError as e:
            raise ContractViolationException(f"target {e.args[0]} not among classes") from e

        U = ndmath.affine(X, self.W, self.b)
        E = ndmath.activation(U, Activation.TANH)
        logits = ndmath.affine(E, self.Wh[:, cols], self.bh[cols])
        loss, d_logits = ndmath.cross_entropy(logits, local)

        d_E, dWh_sub, dbh_sub = ndmath.affine_backward(E, self.Wh[:, cols], d_logits)
        dWh = np.zeros_like(self.Wh)
        dbh = np.zeros_like(self.bh)
        dWh[:, cols] = dWh_sub
        dbh[cols] = dbh_sub
        d_U = ndmath.activation_backward(Activation.TANH, U, E, d_E)
        d_X, dW, db = ndmath.affine_backward(X, self.W, d_U)
        return loss, LayerGrads(params={"W": dW, "b": db, "Wh": dWh, "bh": dbh}, inputs=d_X)

    def loss(self, raw: np.ndarray, targets: Sequence[int], classes: Sequence[int] | None = None) -> float:
        X = self._check(raw)
        cols = np.arange(self.n_outputs) if classes is None else np.asarray(classes, dtype=np.int64)
        remap = {int(c): i for i, c in enumerate(cols)}
        local = np.array([remap[int(t)] for t in targets], dtype=np.int64)
        logits = ndmath.affine(self.trunk(X), self.Wh[:, cols], self.bh[cols])
        return ndmath.cross_entropy(logits, local)[0]

    def __repr__(self) -> str:
        return f"<EncoderModel(d_raw={self.d_raw}, d_emb={self.d_emb}, outputs={self.n_outputs})>"
