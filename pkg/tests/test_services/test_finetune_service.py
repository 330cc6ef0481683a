"""
Tests for encoder fine-tuning, re-extraction and patch readouts.
"""

from itertools import combinations
from typing import List, Tuple

import numpy as np
import pytest

from hcft.models.bag import Bag, CohortIndex, Split, bags_in_split
from hcft.models.encoder import EncoderModel, patch_class_count
from hcft.models.refinement import PatchDataset, PatchEntry, PatchSource
from hcft.schemas.cohort import CohortSpec
from hcft.schemas.training import EncoderHyper, TrainingHistory
from hcft.services.cohort_service import generate_cohort
from hcft.services.finetune_service import (
    collapse_probs,
    init_encoder,
    patch_classes,
    patch_predict,
    reextract,
    stratified_holdout,
    tumor_score,
    train_encoder,
)
from hcft.utils.exceptions import ArgumentException, DimensionMismatchException


def truth_dataset(bags: List[Bag], n_classes: int) -> PatchDataset:
    """D* built from truth labels, planted mimics as hard negatives."""
    entries = []
    for bag in bags:
        for k in range(len(bag)):
            if bag.truth_labels[k] > 0:
                entries.append(PatchEntry(bag.ref(k), int(bag.truth_labels[k]), PatchSource.POS))
            elif bag.mimic_of[k] > 0:
                label = n_classes + int(bag.mimic_of[k]) - 1
                entries.append(PatchEntry(bag.ref(k), label, PatchSource.HARDNEG_FROM_TL))
            else:
                entries.append(PatchEntry(bag.ref(k), 0, PatchSource.POS))
    return PatchDataset(entries=tuple(sorted(entries)), n_classes=n_classes)


@pytest.fixture
def hyper() -> EncoderHyper:
    return EncoderHyper(lr=1e-2, batch_size=16, max_epochs=5, patience=3, val_fraction=0.2)


def test_patch_class_count():
    """Test 2n-1 classes for n bag classes."""
    assert patch_class_count(2) == 3
    assert patch_class_count(4) == 7


def test_identity_encoder_is_tanh(rng: np.random.Generator):
    """Test the identity trunk embeds raw vectors as tanh(raw)."""
    raw = rng.normal(size=(5, 4)).astype(np.float32).astype(np.float64)
    encoder = EncoderModel.identity(4, 2)
    np.testing.assert_allclose(encoder.trunk(raw), np.tanh(raw), atol=1e-15)
    assert encoder.n_outputs == 3


def test_extract_is_on_float32_grid(rng: np.random.Generator):
    """Test extracted embeddings are exactly representable as float32."""
    encoder = init_encoder(0, 4, 3, 2)
    emb = encoder.extract(rng.normal(size=(6, 4)))
    assert emb.dtype == np.float64
    np.testing.assert_array_equal(emb, emb.astype(np.float32).astype(np.float64))


def test_patch_probabilities(rng: np.random.Generator):
    """Test head probabilities sum to one over 2n-1 classes."""
    encoder = init_encoder(0, 4, 3, 3)
    probs = patch_predict(encoder, rng.normal(size=(8, 4)))
    assert probs.shape == (8, 5)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_collapse_and_classes():
    """Test hard-negative mass folds into class 0."""
    probs = np.array([[0.1, 0.2, 0.3, 0.1, 0.3], [0.1, 0.6, 0.1, 0.1, 0.1]])
    np.testing.assert_allclose(collapse_probs(probs, 3), [[0.5, 0.2, 0.3], [0.3, 0.6, 0.1]])
    np.testing.assert_allclose(tumor_score(probs, 3), [0.5, 0.7])
    assert patch_classes(probs, 3).tolist() == [2, 1]
    assert patch_classes(np.array([[0.1, 0.1, 0.8]]), 2).tolist() == [0]


def test_stratified_holdout(rng: np.random.Generator):
    """Test every label with two or more rows keeps rows on both sides."""
    labels = np.array([0] * 10 + [1] * 5 + [2])
    train, val = stratified_holdout(labels, 0.2, rng)
    assert sorted(train.tolist() + val.tolist()) == list(range(16))
    assert np.count_nonzero(labels[val] == 0) == 2
    assert np.count_nonzero(labels[val] == 1) == 1
    assert 15 in train


def test_zero_epochs_returns_encoder_unchanged(small_cohort: List[Bag], hyper: EncoderHyper):
    """Test max_epochs 0 leaves the encoder as it was."""
    encoder = init_encoder(0, 8, 6, 2)
    dataset = truth_dataset(small_cohort, 2)
    trained, history = train_encoder(
        encoder, dataset, CohortIndex(small_cohort), hyper.model_copy(update={"max_epochs": 0})
    )
    assert trained is encoder
    assert history.epochs_run == 0


def test_empty_dataset_rejected(small_cohort: List[Bag], hyper: EncoderHyper):
    """Test fine-tuning on an empty D* fails."""
    with pytest.raises(ArgumentException):
        train_encoder(
            init_encoder(0, 8, 6, 2), PatchDataset(entries=(), n_classes=2), CohortIndex(small_cohort), hyper
        )


def test_head_width_must_match(small_cohort: List[Bag], hyper: EncoderHyper):
    """Test an encoder for another class count is rejected."""
    with pytest.raises(DimensionMismatchException):
        train_encoder(init_encoder(0, 8, 6, 3), truth_dataset(small_cohort, 2), CohortIndex(small_cohort), hyper)


def test_fine_tuning_is_deterministic_and_improves(small_cohort: List[Bag], hyper: EncoderHyper):
    """Test equal seeds give equal encoders and validation loss drops below its start."""
    train = bags_in_split(small_cohort, Split.TRAIN)
    dataset = truth_dataset(train, 2)
    index = CohortIndex(train)
    encoder = init_encoder(0, 8, 6, 2)
    a, history = train_encoder(encoder, dataset, index, hyper, seed=2, round_index=1)
    b, _ = train_encoder(encoder, dataset, index, hyper, seed=2, round_index=1)
    for name, value in a.parameters().items():
        assert value.tobytes() == b.parameters()[name].tobytes()
    assert history.epochs_run >= 1
    assert history.best_val_loss <= history.val_loss[0]


def test_single_class_dataset_warns(small_cohort: List[Bag], hyper: EncoderHyper):
    """Test a D* with one class still trains and records a warning."""
    bag = small_cohort[0]
    entries = tuple(PatchEntry(bag.ref(k), 0, PatchSource.POS) for k in range(len(bag)))
    dataset = PatchDataset(entries=entries, n_classes=2, warnings=("class 1 has no entries in D*",))
    _, history = train_encoder(init_encoder(0, 8, 6, 2), dataset, CohortIndex(small_cohort), hyper)
    assert any("single class" in w for w in history.warnings)


def test_reextract_replaces_embeddings(small_cohort: List[Bag]):
    """Test re-extraction embeds every bag with the trunk."""
    encoder = init_encoder(1, 8, 5, 2)
    embedded = reextract(encoder, small_cohort)
    assert all(b.embeddings.shape == (len(b), 5) for b in embedded)
    np.testing.assert_array_equal(embedded[0].embeddings, encoder.extract(small_cohort[0].raw))
    assert small_cohort[0].embeddings is None


SeparableFit = Tuple[List[Bag], EncoderModel, EncoderModel, TrainingHistory]


@pytest.fixture(scope="module")
def separable_fit() -> SeparableFit:
    """Encoder before and after fine-tuning on a cohort whose normal, tumor and mimic groups are far apart."""
    spec = CohortSpec(
        n_classes=2,
        bags_per_class=[10, 10],
        bag_size_range=(20, 30),
        positive_fraction_range=(0.2, 0.3),
        mimic_fraction_range=(0.2, 0.2),
        d_raw=8,
        class_prototype_separation=8.0,
        noise_sigma=0.3,
        seed=11,
    )
    bags = generate_cohort(spec)
    before = init_encoder(3, 8, 6, 2, scale=0.1)
    hyper = EncoderHyper(lr=1e-2, batch_size=16, max_epochs=80, patience=80, val_fraction=0.2)
    after, history = train_encoder(before, truth_dataset(bags, 2), CohortIndex(bags), hyper, seed=5)
    return bags, before, after, history


def group_of(bag: Bag) -> np.ndarray:
    """0 normal, 1 tumor, 2 planted mimic."""
    return np.where(bag.truth_labels > 0, 1, np.where(bag.mimic_of > 0, 2, 0))


def mean_centroid_distance(encoder: EncoderModel, bags: List[Bag]) -> float:
    emb = np.vstack([encoder.extract(b.raw) for b in bags])
    groups = np.concatenate([group_of(b) for b in bags])
    centroids = [emb[groups == g].mean(axis=0) for g in range(3)]
    return float(np.mean([np.linalg.norm(a - b) for a, b in combinations(centroids, 2)]))


def test_separable_dataset_reaches_high_validation_accuracy(separable_fit: SeparableFit):
    """Test a linearly separable D* is fitted to at least 95% holdout accuracy."""
    _, _, _, history = separable_fit
    assert history.best_epoch >= 0
    assert history.val_accuracy[history.best_epoch] >= 0.95


def test_fine_tuning_spreads_class_centroids(separable_fit: SeparableFit):
    """Test embedding centroids of the three patch groups move apart."""
    bags, before, after, _ = separable_fit
    assert mean_centroid_distance(after, bags) > mean_centroid_distance(before, bags)


def test_tumor_scores_above_mimic_scores(separable_fit: SeparableFit):
    """Test the head scores planted tumor patches above planted mimics."""
    bags, _, after, _ = separable_fit
    raw = np.vstack([b.raw for b in bags])
    groups = np.concatenate([group_of(b) for b in bags])
    scores = tumor_score(patch_predict(after, raw), 2)
    assert np.median(scores[groups == 1]) > np.median(scores[groups == 2])
