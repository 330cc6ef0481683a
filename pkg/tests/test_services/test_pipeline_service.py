"""
Tests for the iterative pipeline, resume, stage errors and sweeps.
"""

from pathlib import Path

import numpy as np
import pytest

from hcft.models.bag import Split, bags_in_split
from hcft.repositories.cohort_repository import RECIPE_FILE, CohortRepository
from hcft.repositories.run_repository import (
    CONFIDENCE_FILE,
    DSTAR_FILE,
    ENCODER_CKPT,
    MIL_CKPT,
    REPORT_FILE,
    REPORTS_FILE,
    TIMING_FILE,
    RunRepository,
)
from hcft.schemas.config import RunConfig
from hcft.schemas.report import SweepRow
from hcft.services import pipeline_service
from hcft.services.cohort_service import generate_cohort, split_cohort
from hcft.services.pipeline_service import (
    SWEEP_FILE,
    SWEEP_SUMMARY_FILE,
    PipelineService,
    summarize_sweep,
    sweep_cell_config,
)
from hcft.utils.exceptions import ArgumentException, ConfigurationException, StageException


def with_updates(config: RunConfig, **updates) -> RunConfig:
    return RunConfig.from_sources(config.model_dump(), updates)


def test_zero_iterations_writes_baseline_only(run_repository: RunRepository, fast_config: RunConfig):
    """Test T=0 produces exactly the round-0 report."""
    config = with_updates(fast_config, iterations=0)
    reports = PipelineService(run_repository).run(config)
    assert [r.round for r in reports] == [0]
    assert reports[0].dstar_size is None
    assert run_repository.completed_rounds("fast") == [0]
    assert not run_repository.round_dir("fast", 1).exists()


def test_round_outputs(run_repository: RunRepository, fast_config: RunConfig):
    """Test a refinement round writes every artifact and consistent set sizes."""
    reports = PipelineService(run_repository).run(fast_config)
    assert [r.round for r in reports] == [0, 1]
    round_dir = run_repository.round_dir("fast", 1)
    for name in (MIL_CKPT, ENCODER_CKPT, DSTAR_FILE, REPORT_FILE, CONFIDENCE_FILE, "froc_mil.csv", "froc_head.csv"):
        assert (round_dir / name).is_file(), name
    assert not (run_repository.round_dir("fast", 0) / DSTAR_FILE).exists()
    assert (run_repository.run_dir("fast") / REPORTS_FILE).is_file()
    assert (run_repository.run_dir("fast") / TIMING_FILE).is_file()

    report = reports[1]
    assert report.dstar_size == report.n_cleaned_high + report.n_final
    assert sum(report.dstar_histogram) == report.dstar_size
    assert len(report.dstar_histogram) == 3
    assert report.n_high == report.k_total

    bags = CohortRepository(run_repository.cohort_dir("fast")).load()
    train_instances = sum(len(b) for b in bags_in_split(bags, Split.TRAIN))
    assert report.n_high + report.n_low == train_instances
    confidence = (round_dir / CONFIDENCE_FILE).read_text(encoding="utf-8").splitlines()
    assert len(confidence) == 1 + sum(len(b) for b in bags)


def test_run_is_deterministic(runs_dir: Path, fast_config: RunConfig):
    """Test two runs with equal seeds write byte-identical reports."""
    first = with_updates(fast_config, name="one")
    second = with_updates(fast_config, name="two")
    repository = RunRepository(runs_dir)
    PipelineService(repository).run(first)
    PipelineService(repository).run(second)
    for t in (0, 1):
        a = (repository.round_dir("one", t) / REPORT_FILE).read_bytes()
        b = (repository.round_dir("two", t) / REPORT_FILE).read_bytes()
        assert a == b
        a = (repository.round_dir("one", t) / CONFIDENCE_FILE).read_bytes()
        b = (repository.round_dir("two", t) / CONFIDENCE_FILE).read_bytes()
        assert a == b


@pytest.mark.slow
def test_resume_matches_uninterrupted_run(runs_dir: Path, fast_config: RunConfig):
    """Test resuming after a lost round reproduces the uninterrupted reports."""
    repository = RunRepository(runs_dir)
    reference = with_updates(fast_config, name="reference", iterations=2, round_patience=5)
    interrupted = with_updates(fast_config, name="interrupted", iterations=2, round_patience=5)
    PipelineService(repository).run(reference)
    PipelineService(repository).run(interrupted)

    (repository.round_dir("interrupted", 2) / REPORT_FILE).unlink()
    (repository.round_dir("interrupted", 2) / DSTAR_FILE).unlink()
    assert repository.completed_rounds("interrupted") == [0, 1]

    reports = PipelineService(repository).run(interrupted, resume=True)
    assert [r.round for r in reports] == [0, 1, 2]
    for t in (0, 1, 2):
        a = (repository.round_dir("reference", t) / REPORT_FILE).read_bytes()
        b = (repository.round_dir("interrupted", t) / REPORT_FILE).read_bytes()
        assert a == b


def test_resume_rejects_changed_config(run_repository: RunRepository, fast_config: RunConfig):
    """Test resuming with a different configuration fails."""
    config = with_updates(fast_config, iterations=0)
    PipelineService(run_repository).run(config)
    with pytest.raises(ConfigurationException):
        PipelineService(run_repository).run(with_updates(config, k0=3), resume=True)


def test_generated_cohort_is_reused_while_recipe_matches(
    run_repository: RunRepository, fast_config: RunConfig
):
    """Test an unchanged config loads the stored cohort and its recipe."""
    service = PipelineService(run_repository)
    first = service.load_cohort(fast_config)
    assert (run_repository.cohort_dir("fast") / RECIPE_FILE).is_file()
    again = service.load_cohort(fast_config, resume=True)
    assert [b.slide_id for b in again] == [b.slide_id for b in first]
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a.raw, b.raw)


def test_rerun_regenerates_stale_cohort(run_repository: RunRepository, fast_config: RunConfig):
    """Test a changed data seed or split replaces the stored cohort on a fresh run."""
    service = PipelineService(run_repository)
    old = service.load_cohort(fast_config)
    changed = with_updates(fast_config, data_seed=8, train_ratio=0.5, val_ratio=0.25, test_ratio=0.25)
    reused = service.load_cohort(changed)

    expected = split_cohort(generate_cohort(changed.cohort_spec()), changed.split_ratios, changed.data_seed)
    assert [(b.slide_id, b.split) for b in reused] == [(b.slide_id, b.split) for b in expected]
    for got, want in zip(reused, expected):
        np.testing.assert_allclose(got.raw, want.raw, rtol=1e-6)
    assert not np.array_equal(np.vstack([b.raw for b in old]), np.vstack([b.raw for b in reused]))
    assert CohortRepository(run_repository.cohort_dir("fast")).load_recipe() == changed.cohort_recipe()


def test_resume_rejects_stale_cohort(run_repository: RunRepository, fast_config: RunConfig):
    """Test resuming over a cohort built from other parameters fails."""
    service = PipelineService(run_repository)
    service.load_cohort(fast_config)
    with pytest.raises(ConfigurationException):
        service.load_cohort(with_updates(fast_config, data_seed=8), resume=True)


def test_rerun_trains_on_regenerated_cohort(run_repository: RunRepository, fast_config: RunConfig):
    """Test a full rerun under the same name reports on the new cohort."""
    PipelineService(run_repository).run(with_updates(fast_config, iterations=0))
    changed = with_updates(fast_config, iterations=0, data_seed=8)
    PipelineService(run_repository).run(changed)
    bags = CohortRepository(run_repository.cohort_dir("fast")).load()
    expected = generate_cohort(changed.cohort_spec())
    assert sorted(b.slide_id for b in bags) == sorted(b.slide_id for b in expected)
    stored = {b.slide_id: b.raw for b in bags}
    for bag in expected:
        np.testing.assert_allclose(stored[bag.slide_id], bag.raw, rtol=1e-6)


def test_training_never_sees_truth(monkeypatch, run_repository: RunRepository, fast_config: RunConfig):
    """Test every training stage receives bags without truth or mimic marks."""
    seen = []

    def clean(bags):
        for bag in bags:
            assert bag.truth_labels is None
            assert bag.mimic_of is None
        seen.append(len(bags))

    real_train_mil = pipeline_service.train_mil
    real_init = pipeline_service.init_pseudo_labels
    real_refine = pipeline_service.run_refinement
    real_encoder = pipeline_service.train_encoder

    def train_mil(model, train, val, *args, **kwargs):
        clean(train)
        clean(val)
        return real_train_mil(model, train, val, *args, **kwargs)

    def init_pseudo_labels(model, train, *args, **kwargs):
        clean(train)
        return real_init(model, train, *args, **kwargs)

    def run_refinement(split, index, options):
        clean(index.bags)
        return real_refine(split, index, options)

    def train_encoder(encoder, dataset, index, *args, **kwargs):
        clean(index.bags)
        return real_encoder(encoder, dataset, index, *args, **kwargs)

    monkeypatch.setattr(pipeline_service, "train_mil", train_mil)
    monkeypatch.setattr(pipeline_service, "init_pseudo_labels", init_pseudo_labels)
    monkeypatch.setattr(pipeline_service, "run_refinement", run_refinement)
    monkeypatch.setattr(pipeline_service, "train_encoder", train_encoder)

    reports = PipelineService(run_repository).run(fast_config)
    assert len(seen) == 2 + 1 + 1 + 1 + 2
    assert reports[1].purity_high is not None


def test_stage_failure_keeps_earlier_rounds(monkeypatch, run_repository: RunRepository, fast_config: RunConfig):
    """Test a failing stage names itself and leaves completed rounds on disk."""

    def broken(*args, **kwargs):
        raise ArgumentException("boom")

    monkeypatch.setattr(pipeline_service, "run_refinement", broken)
    with pytest.raises(StageException) as exc:
        PipelineService(run_repository).run(fast_config)
    assert exc.value.stage == "refine"
    assert exc.value.round_index == 1
    assert exc.value.exit_code == ArgumentException.exit_code
    assert run_repository.completed_rounds("fast") == [0]


def test_round_patience_stops_early(run_repository: RunRepository, fast_config: RunConfig):
    """Test a stalled validation AUC ends the run before T rounds."""
    config = with_updates(
        fast_config,
        iterations=4,
        round_patience=0,
        enc_max_epochs=0,
        mil_max_epochs=0,
        mil_warm_start=True,
    )
    reports = PipelineService(run_repository).run(config)
    assert len(reports) == 2


def test_missing_validation_split(run_repository: RunRepository, fast_config: RunConfig):
    """Test a cohort without validation bags is a data error."""
    config = with_updates(fast_config, train_ratio=0.8, val_ratio=0.0, test_ratio=0.2)
    with pytest.raises(StageException) as exc:
        PipelineService(run_repository).run(config)
    assert exc.value.stage == "cohort"
    assert exc.value.exit_code == 3


def test_sweep_grid(runs_dir: Path, fast_config: RunConfig):
    """Test a 2x2 sweep runs four cells over one shared cohort."""
    repository = RunRepository(runs_dir)
    config = with_updates(fast_config, iterations=0)
    rows = PipelineService(repository).sweep(config, [2, 3], [2, 3], [1])
    assert [(r.k0, r.clusters) for r in rows] == [(2, 2), (2, 3), (3, 2), (3, 3)]
    assert all(r.status == "ok" and r.rounds == 1 for r in rows)

    base = repository.run_dir("fast")
    assert len((base / SWEEP_FILE).read_text(encoding="utf-8").splitlines()) == 5
    assert len((base / SWEEP_SUMMARY_FILE).read_text(encoding="utf-8").splitlines()) == 5
    assert (base / "sweep" / "k2_c3_s1" / "round_0" / REPORT_FILE).is_file()
    assert not (base / "sweep" / "k2_c3_s1" / "cohort").exists()


def test_sweep_rejects_empty_grid(run_repository: RunRepository, fast_config: RunConfig):
    """Test an empty grid is a configuration error."""
    with pytest.raises(ConfigurationException):
        PipelineService(run_repository).sweep(fast_config, [], [2], [0])


def test_sweep_cell_config(fast_config: RunConfig, tmp_path: Path):
    """Test cell configs override only the grid keys, name and paths."""
    cell = sweep_cell_config(fast_config, 4, 6, 9, tmp_path / "sweep", tmp_path / "cohort")
    assert (cell.k0, cell.clusters, cell.seed) == (4, 6, 9)
    assert cell.name == "k4_c6_s9"
    assert cell.cohort_path == tmp_path / "cohort"
    assert cell.mil_max_epochs == fast_config.mil_max_epochs


def test_summarize_sweep():
    """Test means and population deviations skip failed cells."""
    rows = [
        SweepRow(k0=1, clusters=2, seed=0, test_auc=0.6, test_acc=0.5, test_f1=0.4),
        SweepRow(k0=1, clusters=2, seed=1, test_auc=0.8, test_acc=0.7, test_f1=0.6),
        SweepRow(k0=1, clusters=2, seed=2, status="error"),
    ]
    (summary,) = summarize_sweep(rows)
    assert summary.n_runs == 3
    assert summary.n_failed == 1
    assert summary.test_auc_mean == pytest.approx(0.7)
    assert summary.test_auc_std == pytest.approx(0.1)
