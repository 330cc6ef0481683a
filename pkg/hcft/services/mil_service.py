"""
MIL service: gated-attention training and bag/instance readouts.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from hcft.core import ndmath
from hcft.core.logging import get_logger
from hcft.core.ndmath import Adam, make_rng
from hcft.models.bag import Bag
from hcft.models.mil import MILModel
from hcft.schemas.training import MILHyper, TrainingHistory
from hcft.utils.early_stopping import EarlyStopping
from hcft.utils.exceptions import ArgumentException, TrainingException

logger = get_logger(__name__)

_INIT_STREAM = 10
_SHUFFLE_STREAM = 11


def init_mil(seed: int, d_emb: int, hyper: MILHyper, n_classes: int, round_index: int = 0) -> MILModel:
    """Fresh MIL model for ``(seed, round_index)``."""
    rng = make_rng(seed, _INIT_STREAM, round_index)
    return MILModel.init(rng, d_emb, hyper.d_att, hyper.d_hid, n_classes)


def _finite(params: dict) -> bool:
    return all(np.all(np.isfinite(p)) for p in params.values())


def evaluate_loss(model: MILModel, bags: Sequence[Bag]) -> Tuple[float, float]:
    """Mean bag cross-entropy and accuracy."""
    losses = []
    correct = 0
    for bag in bags:
        fwd = model.forward(bag.require_embeddings())
        losses.append(ndmath.cross_entropy(fwd.bag_logits.reshape(1, -1), [bag.label])[0])
        correct += int(fwd.prediction == bag.label)
    return float(np.mean(losses)), correct / len(bags)


def train_mil(
    model: MILModel,
    bags_train: Sequence[Bag],
    bags_val: Sequence[Bag],
    hyper: MILHyper,
    seed: int = 0,
    round_index: int = 0,
) -> Tuple[MILModel, TrainingHistory]:
    """
    Train the aggregator with one bag per step.

    Adam with cosine decay from ``lr_max`` to ``lr_min``; early stopping on
    validation loss; the best-validation snapshot is returned.

    Args:
        model: Starting parameters
        bags_train: Training bags with embeddings
        bags_val: Validation bags with embeddings
        hyper: Training hyper-parameters
        seed: Shuffle seed
        round_index: Pipeline round, selects an independent shuffle stream

    Returns:
        Tuple[MILModel, TrainingHistory]: Best model and per-epoch history

    Raises:
        ArgumentException: If either bag list is empty
        TrainingException: If the loss or parameters stop being finite
    """
    if not bags_train or not bags_val:
        raise ArgumentException("train_mil needs nonempty training and validation bags")

    history = TrainingHistory()
    if hyper.max_epochs == 0:
        return model, history

    params = model.parameters()
    optimizer = Adam(params, lr=hyper.lr_max, betas=hyper.betas, eps=hyper.eps)
    rng = make_rng(seed, _SHUFFLE_STREAM, round_index)
    stopper = EarlyStopping(hyper.patience, mode="min")
    best = model

    for epoch in range(hyper.max_epochs):
        lr = ndmath.cosine_lr(epoch, hyper.max_epochs, hyper.lr_max, hyper.lr_min)
        current = MILModel(**params)
        epoch_losses: List[float] = []
        for pos in rng.permutation(len(bags_train)):
            bag = bags_train[int(pos)]
            loss, grads = current.loss_and_grads(bag.require_embeddings(), bag.label)
            if not np.isfinite(loss) or not _finite(grads.params):
                raise TrainingException("MIL loss diverged", epoch=epoch)
            optimizer.step(grads.params, lr=lr)
            if not _finite(params):
                raise TrainingException("MIL parameters are no longer finite", epoch=epoch)
            epoch_losses.append(loss)

        current = MILModel(**params)
        val_loss, val_acc = evaluate_loss(current, bags_val)
        if not np.isfinite(val_loss):
            raise TrainingException("MIL validation loss is not finite", epoch=epoch)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.lr.append(lr)

        if stopper.update(val_loss):
            best = MILModel.from_parameters(params)
            history.best_epoch = epoch
        if stopper.should_stop:
            history.stopped_early = True
            break

    logger.info(
        "MIL trained",
        round=round_index,
        epochs=history.epochs_run,
        best_epoch=history.best_epoch,
        best_val_loss=history.best_val_loss,
        stopped_early=history.stopped_early,
    )
    return best, history


def bag_probabilities(model: MILModel, bags: Sequence[Bag]) -> np.ndarray:
    """(bags, n) bag-level class probabilities."""
    return np.vstack([model.forward(b.require_embeddings()).bag_probs for b in bags])


def instance_tumor_scores(model: MILModel, bag: Bag) -> np.ndarray:
    """
    Per-instance tumor evidence of the MIL model.

    Attention normalised by the bag maximum times the summed probability of
    the positive classes.
    """
    fwd = model.forward(bag.require_embeddings())
    attention = fwd.attention / np.max(fwd.attention)
    return attention * fwd.instance_probs[:, 1:].sum(axis=1)


def instance_probabilities(model: MILModel, bags: Sequence[Bag]) -> Optional[np.ndarray]:
    """Stacked per-instance class probabilities of ``bags``."""
    if not bags:
        return None
    return np.vstack([model.instance_probs(b.require_embeddings()) for b in bags])
