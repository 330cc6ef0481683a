"""
Finetune service: encoder training on D*, re-extraction and patch readouts.
"""

from typing import List, Sequence, Tuple

import numpy as np

from hcft.core.logging import get_logger
from hcft.core.ndmath import Adam, make_rng
from hcft.models.bag import Bag, CohortIndex
from hcft.models.encoder import EncoderModel
from hcft.models.refinement import PatchDataset
from hcft.schemas.training import EncoderHyper, TrainingHistory
from hcft.utils.early_stopping import EarlyStopping
from hcft.utils.exceptions import ArgumentException, DimensionMismatchException, TrainingException

logger = get_logger(__name__)

_INIT_STREAM = 30
_SPLIT_STREAM = 31
_SHUFFLE_STREAM = 32


def init_encoder(seed: int, d_raw: int, d_emb: int, n_classes: int, scale: float = 1.0) -> EncoderModel:
    """Round-0 encoder with a random trunk."""
    return EncoderModel.init(make_rng(seed, _INIT_STREAM), d_raw, d_emb, n_classes, scale)


def stratified_holdout(
    labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split row indices into train and validation, stratified by label.

    Labels with a single row stay in training.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Sorted train and validation indices
    """
    train: List[int] = []
    val: List[int] = []
    for label in np.unique(labels):
        rows = np.flatnonzero(labels == label)
        rows = rows[rng.permutation(rows.size)]
        n_val = 0
        if rows.size >= 2:
            n_val = min(rows.size - 1, int(np.floor(fraction * rows.size + 0.5)))
        val.extend(int(r) for r in rows[:n_val])
        train.extend(int(r) for r in rows[n_val:])
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(val), dtype=np.int64)


def _accuracy(encoder: EncoderModel, raw: np.ndarray, targets: np.ndarray, classes: np.ndarray) -> float:
    logits = encoder.logits(raw)[:, classes]
    return float(np.mean(classes[np.argmax(logits, axis=1)] == targets))


def train_encoder(
    encoder: EncoderModel,
    dataset: PatchDataset,
    index: CohortIndex,
    hyper: EncoderHyper,
    seed: int = 0,
    round_index: int = 0,
) -> Tuple[EncoderModel, TrainingHistory]:
    """
    Fine-tune the encoder on D* over its present classes.

    Args:
        encoder: Starting encoder
        dataset: Refined patch dataset
        index: Cohort lookup for raw vectors
        hyper: Fine-tuning hyper-parameters
        seed: Seed of the holdout split and batch order
        round_index: Pipeline round, selects independent streams

    Returns:
        Tuple[EncoderModel, TrainingHistory]: Best-validation encoder and history

    Raises:
        ArgumentException: If D* is empty
        TrainingException: If the loss or parameters stop being finite
    """
    if len(dataset) == 0:
        raise ArgumentException("cannot fine-tune on an empty D*")
    if dataset.n_patch_classes != encoder.n_outputs:
        raise DimensionMismatchException(
            "encoder head", (encoder.n_outputs,), (dataset.n_patch_classes,)
        )

    history = TrainingHistory(warnings=list(dataset.warnings))
    classes = np.array(dataset.present_classes(), dtype=np.int64)
    if classes.size == 1:
        history.warnings.append(f"D* holds a single class {int(classes[0])}")
        logger.warning("Degenerate D*", classes=classes.tolist(), size=len(dataset))
    if hyper.max_epochs == 0:
        return encoder, history

    raw = index.raw(dataset.refs)
    targets = dataset.labels
    train_idx, val_idx = stratified_holdout(
        targets, hyper.val_fraction, make_rng(seed, _SPLIT_STREAM, round_index)
    )
    if val_idx.size == 0:
        history.warnings.append("D* too small for a holdout; validating on training entries")
        val_idx = train_idx

    params = encoder.parameters()
    optimizer = Adam(params, lr=hyper.lr, betas=hyper.betas, eps=hyper.eps)
    rng = make_rng(seed, _SHUFFLE_STREAM, round_index)
    stopper = EarlyStopping(hyper.patience, mode="min")
    best = encoder

    for epoch in range(hyper.max_epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        batch_losses = []
        for start in range(0, order.size, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            current = EncoderModel(**params)
            loss, grads = current.loss_and_grads(raw[batch], targets[batch], classes)
            if not np.isfinite(loss):
                raise TrainingException("encoder loss diverged", epoch=epoch)
            optimizer.step(grads.params)
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                raise TrainingException("encoder parameters are no longer finite", epoch=epoch)
            batch_losses.append(loss * batch.size)

        current = EncoderModel(**params)
        val_loss = current.loss(raw[val_idx], targets[val_idx], classes)
        history.train_loss.append(float(np.sum(batch_losses) / order.size))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(_accuracy(current, raw[val_idx], targets[val_idx], classes))
        history.lr.append(hyper.lr)

        if stopper.update(val_loss):
            best = EncoderModel.from_parameters(params)
            history.best_epoch = epoch
        if stopper.should_stop:
            history.stopped_early = True
            break

    logger.info(
        "Encoder fine-tuned",
        round=round_index,
        entries=len(dataset),
        classes=classes.tolist(),
        epochs=history.epochs_run,
        best_epoch=history.best_epoch,
        best_val_loss=history.best_val_loss,
    )
    return best, history


def reextract(encoder: EncoderModel, bags: Sequence[Bag]) -> List[Bag]:
    """Replace every bag's embeddings with the encoder trunk output."""
    return [bag.with_embeddings(encoder.extract(bag.raw)) for bag in bags]


def patch_predict(encoder: EncoderModel, raw: np.ndarray) -> np.ndarray:
    """(rows, 2n-1) class probabilities of the patch head."""
    return encoder.predict_proba(raw)


def tumor_score(probs: np.ndarray, n_classes: int) -> np.ndarray:
    """Summed probability of the positive classes 1..n-1."""
    return np.asarray(probs)[:, 1:n_classes].sum(axis=1)


def collapse_probs(probs: np.ndarray, n_classes: int) -> np.ndarray:
    """Fold hard-negative mass into class 0, giving (rows, n) probabilities."""
    probs = np.asarray(probs)
    out = probs[:, :n_classes].copy()
    out[:, 0] += probs[:, n_classes:].sum(axis=1)
    return out


def patch_classes(probs: np.ndarray, n_classes: int) -> np.ndarray:
    """Arg-max patch class with hard-negative classes read as 0."""
    pred = np.argmax(np.asarray(probs), axis=1)
    return np.where(pred >= n_classes, 0, pred)
