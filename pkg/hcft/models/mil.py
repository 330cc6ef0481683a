"""
Gated-attention MIL aggregator and bag classifier.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from hcft.core import ndmath
from hcft.core.ndmath import Activation, LayerGrads
from hcft.utils.exceptions import ContractViolationException, DimensionMismatchException

PARAM_NAMES: Tuple[str, ...] = ("V1", "V2", "w", "W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class BagForward:
    """Forward quantities of one bag."""

    attention: np.ndarray
    bag_embedding: np.ndarray
    bag_logits: np.ndarray
    instance_probs: np.ndarray

    @property
    def bag_probs(self) -> np.ndarray:
        return ndmath.softmax_rows(self.bag_logits.reshape(1, -1))[0]

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.bag_logits))


@dataclass(frozen=True, eq=False)
class MILModel:
    """
    Gated attention (V1, V2, w) followed by the bag head
    (affine D_emb→D_hid, relu, affine D_hid→n).
    """

    V1: np.ndarray
    V2: np.ndarray
    w: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        d_emb, d_att = self.V1.shape
        if self.V2.shape != (d_emb, d_att) or self.w.shape != (d_att,):
            raise DimensionMismatchException("MILModel attention", self.V1.shape, self.V2.shape)
        if self.W1.shape[0] != d_emb or self.b1.shape != (self.W1.shape[1],):
            raise DimensionMismatchException("MILModel hidden", self.W1.shape, self.b1.shape)
        if self.W2.shape[0] != self.W1.shape[1] or self.b2.shape != (self.W2.shape[1],):
            raise DimensionMismatchException("MILModel output", self.W2.shape, self.b2.shape)
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractViolationException(f"MILModel parameter {name} is not finite")

    @classmethod
    def init(
        cls, rng: np.random.Generator, d_emb: int, d_att: int, d_hid: int, n_classes: int
    ) -> "MILModel":
        """Random initialisation scaled by fan-in."""

        def dense(fan_in: int, fan_out: int) -> np.ndarray:
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

        return cls(
            V1=dense(d_emb, d_att),
            V2=dense(d_emb, d_att),
            w=rng.normal(0.0, 1.0 / np.sqrt(d_att), size=d_att),
            W1=dense(d_emb, d_hid),
            b1=np.zeros(d_hid),
            W2=dense(d_hid, n_classes),
            b2=np.zeros(n_classes),
        )

    @property
    def d_emb(self) -> int:
        return int(self.V1.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.W2.shape[1])

    def parameters(self) -> Dict[str, np.ndarray]:
        """Parameter copies in declaration order."""
        return {name: getattr(self, name).copy() for name in PARAM_NAMES}

    @classmethod
    def from_parameters(cls, params: Dict[str, np.ndarray]) -> "MILModel":
        return cls(**{name: np.array(params[name], dtype=np.float64) for name in PARAM_NAMES})

    def _check(self, embeddings: np.ndarray) -> np.ndarray:
        H = ndmath.as_matrix(embeddings, "embeddings")
        if H.shape[0] < 1:
            raise ContractViolationException("empty bag")
        if H.shape[1] != self.d_emb:
            raise DimensionMismatchException("MIL embeddings", H.shape, self.V1.shape)
        return H

    def _head(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        z1 = ndmath.affine(X, self.W1, self.b1)
        r = ndmath.activation(z1, Activation.RELU)
        return z1, r, ndmath.affine(r, self.W2, self.b2)

    def _gates(self, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        zeros = np.zeros(self.V1.shape[1])
        A1 = ndmath.activation(ndmath.affine(H, self.V1, zeros), Activation.TANH)
        A2 = ndmath.activation(ndmath.affine(H, self.V2, zeros), Activation.SIGMOID)
        e = (A1 * A2) @ self.w
        return A1, A2, e

    def attention_scores(self, embeddings: np.ndarray) -> np.ndarray:
        """Softmax over instances of ``wᵀ(tanh(V1ᵀh) ⊙ sigm(V2ᵀh))``."""
        H = self._check(embeddings)
        _, _, e = self._gates(H)
        return ndmath.softmax_rows(e.reshape(1, -1))[0]

    def instance_probs(self, embeddings: np.ndarray) -> np.ndarray:
        """Bag head applied to each instance embedding, softmaxed per row."""
        H = self._check(embeddings)
        return ndmath.softmax_rows(self._head(H)[2])

    def forward(self, embeddings: np.ndarray) -> BagForward:
        H = self._check(embeddings)
        a = self.attention_scores(H)
        bag_embedding = a @ H
        _, _, logits = self._head(bag_embedding.reshape(1, -1))
        return BagForward(
            attention=a,
            bag_embedding=bag_embedding,
            bag_logits=logits[0],
            instance_probs=self.instance_probs(H),
        )

    def bag_loss(self, embeddings: np.ndarray, label: int) -> float:
        H = self._check(embeddings)
        a = self.attention_scores(H)
        _, _, logits = self._head((a @ H).reshape(1, -1))
        return ndmath.cross_entropy(logits, [label])[0]

    def loss_and_grads(self, embeddings: np.ndarray, label: int) -> Tuple[float, LayerGrads]:
        """
        Bag-level cross-entropy and its gradient.

        Args:
            embeddings: (N, D_emb) instance embeddings of one bag
            label: Bag label

        Returns:
            Tuple of (loss, gradients for every parameter and the embeddings)
        """
        H = self._check(embeddings)
        zeros = np.zeros(self.V1.shape[1])
        U1 = ndmath.affine(H, self.V1, zeros)
        U2 = ndmath.affine(H, self.V2, zeros)
        A1 = ndmath.activation(U1, Activation.TANH)
        A2 = ndmath.activation(U2, Activation.SIGMOID)
        G = A1 * A2
        e = G @ self.w
        a = ndmath.softmax_rows(e.reshape(1, -1))
        M = a @ H
        z1, r, logits = self._head(M)
        loss, d_logits = ndmath.cross_entropy(logits, [label])

        d_r, dW2, db2 = ndmath.affine_backward(r, self.W2, d_logits)
        d_z1 = ndmath.activation_backward(Activation.RELU, z1, r, d_r)
        d_M, dW1, db1 = ndmath.affine_backward(M, self.W1, d_z1)

        d_a = d_M @ H.T
        d_e = ndmath.activation_backward(Activation.SOFTMAX_ROWS, e.reshape(1, -1), a, d_a)[0]
        dw = G.T @ d_e
        d_G = np.outer(d_e, self.w)
        d_U1 = ndmath.activation_backward(Activation.TANH, U1, A1, d_G * A2)
        d_U2 = ndmath.activation_backward(Activation.SIGMOID, U2, A2, d_G * A1)
        dH1, dV1, _ = ndmath.affine_backward(H, self.V1, d_U1)
        dH2, dV2, _ = ndmath.affine_backward(H, self.V2, d_U2)
        d_H = a.T @ d_M + dH1 + dH2

        grads = LayerGrads(
            params={"V1": dV1, "V2": dV2, "w": dw, "W1": dW1, "b1": db1, "W2": dW2, "b2": db2},
            inputs=d_H,
        )
        return loss, grads

    def __repr__(self) -> str:
        return (
            f"<MILModel(d_emb={self.d_emb}, d_att={self.V1.shape[1]}, "
            f"d_hid={self.W1.shape[1]}, n_classes={self.n_classes})>"
        )
