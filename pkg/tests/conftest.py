"""
Pytest configuration and fixtures.
"""

from pathlib import Path
from typing import List

import numpy as np
import pytest
from fastapi.testclient import TestClient

from hcft.api.dependencies import get_run_repository
from hcft.main import app
from hcft.models.bag import Bag
from hcft.repositories.run_repository import RunRepository
from hcft.schemas.cohort import CohortSpec
from hcft.schemas.config import RunConfig
from hcft.schemas.training import MILHyper
from hcft.services.cohort_service import generate_cohort, split_cohort
from hcft.services.finetune_service import init_encoder, reextract


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator fixture."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec() -> CohortSpec:
    """Small two-class cohort spec fixture."""
    return CohortSpec(
        n_classes=2,
        bags_per_class=[8, 8],
        bag_size_range=(12, 20),
        positive_fraction_range=(0.2, 0.3),
        mimic_fraction_range=(0.2, 0.2),
        d_raw=8,
        class_prototype_separation=4.0,
        noise_sigma=0.5,
        seed=7,
    )


@pytest.fixture
def small_cohort(small_spec: CohortSpec) -> List[Bag]:
    """Generated and split cohort without embeddings."""
    return split_cohort(generate_cohort(small_spec), (0.6, 0.2, 0.2), seed=0)


@pytest.fixture
def embedded_cohort(small_cohort: List[Bag]) -> List[Bag]:
    """Small cohort embedded by the seeded round-0 encoder."""
    return reextract(init_encoder(0, 8, 6, 2), small_cohort)


@pytest.fixture
def fast_mil_hyper() -> MILHyper:
    """MIL hyper-parameters small enough for unit tests."""
    return MILHyper(d_att=4, d_hid=6, max_epochs=15, patience=5, lr_max=1e-2, lr_min=1e-3)


@pytest.fixture
def runs_dir(tmp_path: Path) -> Path:
    """Temporary runs directory."""
    path = tmp_path / "runs"
    path.mkdir()
    return path


@pytest.fixture
def run_repository(runs_dir: Path) -> RunRepository:
    return RunRepository(runs_dir)


@pytest.fixture
def fast_config(runs_dir: Path) -> RunConfig:
    """Run configuration that finishes a round in well under a second."""
    return RunConfig(
        name="fast",
        runs_dir=runs_dir,
        n_classes=2,
        bags_per_class=[8, 8],
        bag_size_min=12,
        bag_size_max=20,
        positive_fraction_min=0.2,
        positive_fraction_max=0.3,
        d_raw=8,
        d_emb=6,
        noise_sigma=0.5,
        data_seed=7,
        seed=1,
        k0=2,
        clusters=3,
        kmeans_restarts=2,
        kmeans_max_iter=50,
        iterations=1,
        d_att=4,
        d_hid=6,
        mil_lr_max=1e-2,
        mil_lr_min=1e-3,
        mil_max_epochs=6,
        mil_patience=3,
        enc_lr=1e-3,
        enc_batch_size=16,
        enc_max_epochs=4,
        enc_patience=2,
    )


@pytest.fixture
def client(runs_dir: Path):
    """Test client fixture reading runs from the temporary runs directory."""
    app.dependency_overrides[get_run_repository] = lambda: RunRepository(runs_dir)
    try:
        yield TestClient(app)
    finally:
        app.dependency_overrides.clear()
