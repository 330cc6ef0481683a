"""
Pipeline service: the iterative refine / fine-tune / retrain loop, resume and sweeps.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from hcft.core.logging import get_logger
from hcft.models.bag import Bag, CohortIndex, Split, bags_in_split
from hcft.models.encoder import EncoderModel
from hcft.models.mil import MILModel
from hcft.repositories.checkpoint_repository import CheckpointRepository
from hcft.repositories.cohort_repository import CohortRepository
from hcft.repositories.run_repository import RunRepository, render_csv
from hcft.schemas.config import RunConfig
from hcft.schemas.metrics import ClassificationMetrics, FrocCurve, PatchMetrics
from hcft.schemas.report import RoundReport, SweepRow, SweepSummaryRow
from hcft.services.cohort_service import generate_cohort, split_cohort
from hcft.services.confidence_service import confidence_rows, confidence_table, init_pseudo_labels
from hcft.services.finetune_service import (
    collapse_probs,
    init_encoder,
    patch_classes,
    patch_predict,
    reextract,
    train_encoder,
    tumor_score,
)
from hcft.services.metrics_service import auc_ovr, classification_metrics, patch_metrics
from hcft.services.mil_service import (
    bag_probabilities,
    init_mil,
    instance_probabilities,
    instance_tumor_scores,
    train_mil,
)
from hcft.services.refine_service import (
    RefineOptions,
    audit_severity,
    build_patch_dataset,
    mimic_audit,
    positive_purity,
    run_refinement,
)
from hcft.utils.early_stopping import EarlyStopping
from hcft.utils.exceptions import (
    ConfigurationException,
    DataException,
    HCFTException,
    StageException,
    UndefinedMetricException,
)

logger = get_logger(__name__)

SWEEP_FILE = "sweep.csv"
SWEEP_SUMMARY_FILE = "sweep_summary.csv"


@dataclass
class BagScores:
    """Bag-level metrics of one split."""

    acc: Optional[float] = None
    auc: Optional[float] = None
    f1: Optional[float] = None


@dataclass
class Evaluation:
    """Bag metrics on val/test plus patch metrics of both score sources."""

    val: BagScores = field(default_factory=BagScores)
    test: BagScores = field(default_factory=BagScores)
    mil_patch: PatchMetrics = field(default_factory=PatchMetrics)
    head_patch: PatchMetrics = field(default_factory=PatchMetrics)
    mil_froc: Optional[FrocCurve] = None
    head_froc: Optional[FrocCurve] = None

    def rows(self) -> List[Tuple[str, Optional[float]]]:
        """``metric,value`` rows for the ``eval`` command."""
        return [
            ("val_acc", self.val.acc),
            ("val_auc", self.val.auc),
            ("val_f1", self.val.f1),
            ("test_acc", self.test.acc),
            ("test_auc", self.test.auc),
            ("test_f1", self.test.f1),
            ("mil_patch_acc", self.mil_patch.acc),
            ("mil_patch_auc", self.mil_patch.auc),
            ("mil_patch_f1", self.mil_patch.f1),
            ("mil_cpm", self.mil_patch.cpm),
            ("head_patch_acc", self.head_patch.acc),
            ("head_patch_auc", self.head_patch.auc),
            ("head_patch_f1", self.head_patch.f1),
            ("head_cpm", self.head_patch.cpm),
        ]


def bag_scores(model: MILModel, bags: Sequence[Bag], n_classes: int) -> BagScores:
    """ACC, one-vs-rest AUC and F1 of bag predictions."""
    if not bags:
        return BagScores()
    probs = bag_probabilities(model, bags)
    truth = np.array([b.label for b in bags], dtype=np.int64)
    cls: ClassificationMetrics = classification_metrics(np.argmax(probs, axis=1), truth, n_classes)
    try:
        auc: Optional[float] = auc_ovr(probs, truth, n_classes)
    except UndefinedMetricException:
        auc = None
    return BagScores(acc=cls.acc, auc=auc, f1=cls.f1)


def evaluate_models(
    mil: MILModel, encoder: EncoderModel, bags: Sequence[Bag], n_classes: int
) -> Evaluation:
    """
    Evaluate a MIL model and encoder head on the val and test bags.

    Patch metrics use test bags with instance truth only.

    Args:
        mil: Trained MIL model
        encoder: Encoder whose head gives patch predictions
        bags: Cohort with current embeddings
        n_classes: Number of bag classes
    """
    result = Evaluation(
        val=bag_scores(mil, bags_in_split(bags, Split.VAL), n_classes),
        test=bag_scores(mil, bags_in_split(bags, Split.TEST), n_classes),
    )
    labelled = [b for b in bags_in_split(bags, Split.TEST) if b.has_truth]
    if not labelled:
        return result

    truth = np.concatenate([b.truth_labels for b in labelled])
    slide_ids = [b.slide_id for b in labelled for _ in range(len(b))]

    mil_probs = instance_probabilities(mil, labelled)
    mil_scores = np.concatenate([instance_tumor_scores(mil, b) for b in labelled])
    result.mil_patch, result.mil_froc = patch_metrics(
        mil_probs, np.argmax(mil_probs, axis=1), truth, mil_scores, slide_ids, n_classes
    )

    head_probs = patch_predict(encoder, np.vstack([b.raw for b in labelled]))
    result.head_patch, result.head_froc = patch_metrics(
        collapse_probs(head_probs, n_classes),
        patch_classes(head_probs, n_classes),
        truth,
        tumor_score(head_probs, n_classes),
        slide_ids,
        n_classes,
    )
    return result


@contextmanager
def stage(name: str, round_index: int) -> Iterator[None]:
    """Tag any failure inside the block with the stage name and round."""
    try:
        yield
    except StageException:
        raise
    except Exception as e:
        logger.error("Stage failed", stage=name, round=round_index, error=str(e))
        raise StageException(name, round_index, e) from e


def training_view(bags: Sequence[Bag]) -> List[Bag]:
    """Bags as training stages see them: no instance truth, no mimic marks."""
    return [b.without_truth() for b in bags]


@dataclass
class RunState:
    """Models and cohort carried from one round to the next."""

    bags: List[Bag]
    encoder0: EncoderModel
    encoder: EncoderModel
    mil: MILModel


class PipelineService:
    """Service for running, resuming and sweeping refinement pipelines."""

    def __init__(self, repository: RunRepository):
        self.repository = repository
        self.checkpoints = CheckpointRepository()

    def load_cohort(self, config: RunConfig, resume: bool = False) -> List[Bag]:
        """
        Load the configured cohort or generate and split a fresh one.

        A generated cohort is stored under the run directory with its recipe
        and reused only while the recipe matches the config. A stale cohort
        is regenerated, unless the run resumes.

        Raises:
            ConfigurationException: If the cohort disagrees with the config
            DataException: If the cohort lacks training or validation bags
        """
        if config.cohort_path is not None:
            bags = CohortRepository(config.cohort_path).load()
        else:
            cohort_repo = CohortRepository(self.repository.cohort_dir(config.name))
            recipe = config.cohort_recipe()
            stored = cohort_repo.load_recipe() if cohort_repo.exists() else None
            if stored == recipe:
                bags = cohort_repo.load()
            else:
                if resume and cohort_repo.exists():
                    raise ConfigurationException(
                        f"stored cohort of run {config.name!r} does not match the config"
                    )
                if stored is not None:
                    logger.warning("Regenerating stale cohort", name=config.name)
                bags = split_cohort(generate_cohort(recipe.spec), recipe.split_ratios, config.data_seed)
                cohort_repo.save(bags)
                cohort_repo.save_recipe(recipe)

        d_raw = bags[0].raw.shape[1]
        if d_raw != config.d_raw:
            raise ConfigurationException(f"cohort has d_raw={d_raw} but config says {config.d_raw}")
        top = max(b.label for b in bags)
        if top >= config.n_classes:
            raise ConfigurationException(f"cohort has bag label {top} but n_classes={config.n_classes}")
        for split in (Split.TRAIN, Split.VAL):
            if not bags_in_split(bags, split):
                raise DataException(f"cohort has no {split.value} bags")
        return bags

    def _write_models(self, name: str, t: int, state: RunState) -> None:
        self.checkpoints.save_mil(state.mil, self.repository.mil_checkpoint(name, t))
        self.checkpoints.save_encoder(state.encoder, self.repository.encoder_checkpoint(name, t))

    def _write_outputs(
        self, config: RunConfig, t: int, state: RunState, evaluation: Evaluation
    ) -> None:
        name = config.name
        self._write_models(name, t, state)
        self.repository.write_froc(name, t, "mil", evaluation.mil_froc)
        self.repository.write_froc(name, t, "head", evaluation.head_froc)
        table = confidence_table(state.mil, training_view(state.bags), t, config.k0)
        self.repository.write_confidence(name, t, confidence_rows(table))

    @staticmethod
    def _fill_metrics(report: RoundReport, evaluation: Evaluation) -> None:
        report.val_acc, report.val_auc, report.val_f1 = (
            evaluation.val.acc,
            evaluation.val.auc,
            evaluation.val.f1,
        )
        report.test_acc, report.test_auc, report.test_f1 = (
            evaluation.test.acc,
            evaluation.test.auc,
            evaluation.test.f1,
        )
        report.mil_patch_acc = evaluation.mil_patch.acc
        report.mil_patch_auc = evaluation.mil_patch.auc
        report.mil_patch_f1 = evaluation.mil_patch.f1
        report.mil_cpm = evaluation.mil_patch.cpm
        report.head_patch_acc = evaluation.head_patch.acc
        report.head_patch_auc = evaluation.head_patch.auc
        report.head_patch_f1 = evaluation.head_patch.f1
        report.head_cpm = evaluation.head_patch.cpm

    def _baseline(self, config: RunConfig, bags: List[Bag]) -> Tuple[RunState, RoundReport]:
        """Round 0: random encoder, MIL on its embeddings."""
        with stage("encoder", 0):
            encoder0 = init_encoder(
                config.seed, config.d_raw, config.d_emb, config.n_classes, config.encoder_init_scale
            )
            bags = reextract(encoder0, bags)
        with stage("mil", 0):
            view = training_view(bags)
            mil, history = train_mil(
                init_mil(config.seed, config.d_emb, config.mil_hyper(), config.n_classes, 0),
                bags_in_split(view, Split.TRAIN),
                bags_in_split(view, Split.VAL),
                config.mil_hyper(),
                seed=config.seed,
                round_index=0,
            )
        state = RunState(bags=bags, encoder0=encoder0, encoder=encoder0, mil=mil)
        with stage("evaluate", 0):
            evaluation = evaluate_models(mil, encoder0, bags, config.n_classes)
        report = RoundReport(
            round=0,
            mil_epochs=history.epochs_run,
            mil_best_val_loss=_finite_or_none(history.best_val_loss),
            n_warnings=len(history.warnings),
        )
        self._fill_metrics(report, evaluation)
        with stage("write", 0):
            self._write_outputs(config, 0, state, evaluation)
        return state, report

    def _round(self, config: RunConfig, r: int, state: RunState) -> Tuple[RunState, RoundReport]:
        """One refinement round; ``r >= 1`` uses schedule index ``t = r - 1``."""
        n = config.n_classes
        t = r - 1
        view = training_view(state.bags)
        train_view = bags_in_split(view, Split.TRAIN)
        index = CohortIndex(train_view)
        audit_index = CohortIndex(bags_in_split(state.bags, Split.TRAIN))

        with stage("confidence", r):
            split, table = init_pseudo_labels(state.mil, train_view, t, config.k0)
        with stage("refine", r):
            refinement = run_refinement(
                split,
                index,
                RefineOptions(
                    n_classes=n,
                    clusters=config.clusters,
                    theta=config.theta,
                    seed=config.seed,
                    restarts=config.kmeans_restarts,
                    max_iter=config.kmeans_max_iter,
                    enable_mining=config.enable_mining,
                    enable_searching=config.enable_searching,
                    enable_cleaning=config.enable_cleaning,
                    round_index=r,
                ),
            )
        with stage("dataset", r):
            dataset = build_patch_dataset(
                refinement.cleaned_high,
                refinement.n_final,
                n,
                from_high=refinement.n_middle_h.keys(),
            )
            audit_severity(dataset, index)
        with stage("finetune", r):
            base = state.encoder0 if config.reset_encoder else state.encoder
            encoder, enc_history = train_encoder(
                base, dataset, index, config.encoder_hyper(), seed=config.seed, round_index=r
            )
        with stage("reextract", r):
            bags = reextract(encoder, state.bags)
        with stage("mil", r):
            view = training_view(bags)
            start = (
                state.mil
                if config.mil_warm_start
                else init_mil(config.seed, config.d_emb, config.mil_hyper(), n, r)
            )
            mil, mil_history = train_mil(
                start,
                bags_in_split(view, Split.TRAIN),
                bags_in_split(view, Split.VAL),
                config.mil_hyper(),
                seed=config.seed,
                round_index=r,
            )
        new_state = RunState(bags=bags, encoder0=state.encoder0, encoder=encoder, mil=mil)
        with stage("evaluate", r):
            evaluation = evaluate_models(mil, encoder, bags, n)
            audit = mimic_audit(
                refinement,
                audit_index,
                [ref for b in bags_in_split(state.bags, Split.TRAIN) for ref in b.refs()],
            )

        report = RoundReport(
            round=r,
            k_total=table.total_high,
            n_high=len(refinement.high),
            n_low=len(refinement.low),
            n_original=len(refinement.n_original),
            n_middle_l=len(refinement.n_middle_l),
            n_middle_h=len(refinement.n_middle_h),
            n_final=len(refinement.n_final),
            n_cleaned_high=len(refinement.cleaned_high),
            dstar_size=len(dataset),
            dstar_histogram=dataset.histogram(),
            purity_high=positive_purity(refinement.high, audit_index),
            purity_cleaned=positive_purity(refinement.cleaned_high, audit_index),
            mimic_precision=audit["mimic_precision"],
            mimic_recall=audit["mimic_recall"],
            mimic_base_rate=audit["mimic_base_rate"],
            mil_epochs=mil_history.epochs_run,
            mil_best_val_loss=_finite_or_none(mil_history.best_val_loss),
            enc_epochs=enc_history.epochs_run,
            enc_best_val_loss=_finite_or_none(enc_history.best_val_loss),
            n_warnings=len(refinement.warnings) + len(enc_history.warnings) + len(mil_history.warnings),
        )
        self._fill_metrics(report, evaluation)
        with stage("write", r):
            self.repository.write_dstar(config.name, r, dataset)
            self._write_outputs(config, r, new_state, evaluation)
        return new_state, report

    def _restore(self, config: RunConfig, bags: List[Bag], last: int) -> RunState:
        name = config.name
        with stage("resume", last):
            encoder0 = self.checkpoints.load_encoder(self.repository.encoder_checkpoint(name, 0))
            encoder = self.checkpoints.load_encoder(self.repository.encoder_checkpoint(name, last))
            mil = self.checkpoints.load_mil(self.repository.mil_checkpoint(name, last))
        return RunState(bags=reextract(encoder, bags), encoder0=encoder0, encoder=encoder, mil=mil)

    def run(self, config: RunConfig, resume: bool = False) -> List[RoundReport]:
        """
        Run rounds 0..T, stopping early when validation AUC stalls.

        Every round writes its checkpoints, D*, FROC tables and heatmap, then
        its report last.

        Args:
            config: Run configuration
            resume: Continue after the last completed round of an existing run

        Returns:
            List[RoundReport]: One report per completed round

        Raises:
            StageException: When a stage fails; earlier rounds stay on disk
        """
        name = config.name
        echo = config.echo()
        self.repository.prepare(name, echo, resume=resume)
        with stage("cohort", 0):
            bags = self.load_cohort(config, resume=resume)

        stopper = EarlyStopping(config.round_patience, mode="max")
        reports: List[RoundReport] = []
        state: Optional[RunState] = None
        done = self.repository.completed_rounds(name) if resume else []
        if done:
            last = done[-1]
            reports = [self.repository.read_report(name, t) for t in done]
            for report in reports:
                stopper.update(report.selection_auc)
            self.repository.truncate_after(name, last)
            state = self._restore(config, bags, last)
            logger.info("Run resumed", name=name, completed=len(done))
        else:
            self.repository.truncate_after(name, -1)

        for r in range(len(reports), config.iterations + 1):
            if stopper.should_stop:
                break
            started = time.perf_counter()
            self.repository.start_round(name, r, echo)
            if state is None:
                state, report = self._baseline(config, bags)
            else:
                state, report = self._round(config, r, state)
            self.repository.write_report(name, r, report)
            seconds = time.perf_counter() - started
            self.repository.write_timing(name, r, seconds)
            reports.append(report)
            stopper.update(report.selection_auc)
            logger.info(
                "Round finished",
                name=name,
                round=r,
                val_auc=report.val_auc,
                test_auc=report.test_auc,
                dstar_size=report.dstar_size,
                seconds=round(seconds, 3),
            )

        if stopper.should_stop and len(reports) <= config.iterations:
            logger.info("Validation AUC stalled", name=name, rounds=len(reports), best_round=stopper.best_step)
        return reports

    def sweep(
        self,
        config: RunConfig,
        k0_values: Sequence[int],
        cluster_values: Sequence[int],
        seeds: Sequence[int],
        jobs: int = 1,
    ) -> List[SweepRow]:
        """
        One full run per (K0, C, seed) cell over a shared cohort.

        Failed cells are reported with ``status=error``; the rest continue.

        Returns:
            List[SweepRow]: Rows in grid order
        """
        if not k0_values or not cluster_values or not seeds:
            raise ConfigurationException("sweep grid is empty")
        base_dir = self.repository.run_dir(config.name)
        base_dir.mkdir(parents=True, exist_ok=True)
        cohort_path = config.cohort_path
        if cohort_path is None:
            self.load_cohort(config)
            cohort_path = self.repository.cohort_dir(config.name)

        cells = [
            sweep_cell_config(config, k0, c, seed, base_dir / "sweep", cohort_path)
            for k0, c, seed in product(k0_values, cluster_values, seeds)
        ]
        logger.info("Sweep started", cells=len(cells), jobs=jobs)
        payloads = [cell.model_dump(mode="json") for cell in cells]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(run_sweep_cell, payloads))
        else:
            rows = [run_sweep_cell(p) for p in payloads]

        (base_dir / SWEEP_FILE).write_text(
            render_csv(SweepRow.header(), [row.cells() for row in rows]), encoding="utf-8"
        )
        summary = summarize_sweep(rows)
        (base_dir / SWEEP_SUMMARY_FILE).write_text(
            render_csv(SweepSummaryRow.header(), [row.cells() for row in summary]),
            encoding="utf-8",
        )
        return rows


def _finite_or_none(value: float) -> Optional[float]:
    return value if np.isfinite(value) else None


def sweep_cell_config(
    config: RunConfig, k0: int, clusters: int, seed: int, runs_dir: Path, cohort_path: Path
) -> RunConfig:
    """Configuration of one sweep cell."""
    data: Dict[str, Any] = config.model_dump()
    data.update(
        k0=k0,
        clusters=clusters,
        seed=seed,
        runs_dir=runs_dir,
        name=f"k{k0}_c{clusters}_s{seed}",
        cohort_path=cohort_path,
    )
    return RunConfig.from_sources(data)


def run_sweep_cell(payload: Dict[str, Any]) -> SweepRow:
    """Run one sweep cell; module level so worker processes can pickle it."""
    config = RunConfig.model_validate(payload)
    row = SweepRow(k0=config.k0, clusters=config.clusters, seed=config.seed)
    try:
        reports = PipelineService(RunRepository(config.runs_dir)).run(config)
    except HCFTException as e:
        logger.error("Sweep cell failed", name=config.name, error=e.detail)
        row.status = "error"
        return row
    final = reports[-1]
    row.rounds = len(reports)
    row.test_acc = final.test_acc
    row.test_auc = final.test_auc
    row.test_f1 = final.test_f1
    row.mil_cpm = final.mil_cpm
    row.head_cpm = final.head_cpm
    return row


def _mean_std(values: List[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    present = [v for v in values if v is not None]
    if not present:
        return None, None
    return float(np.mean(present)), float(np.std(present))


def summarize_sweep(rows: Sequence[SweepRow]) -> List[SweepSummaryRow]:
    """Mean and population standard deviation over seeds per (K0, C) cell."""
    groups: Dict[Tuple[int, int], List[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.k0, row.clusters), []).append(row)
    summary = []
    for (k0, clusters), members in groups.items():
        ok = [m for m in members if m.status == "ok"]
        auc = _mean_std([m.test_auc for m in ok])
        acc = _mean_std([m.test_acc for m in ok])
        f1 = _mean_std([m.test_f1 for m in ok])
        summary.append(
            SweepSummaryRow(
                k0=k0,
                clusters=clusters,
                n_runs=len(members),
                n_failed=len(members) - len(ok),
                test_auc_mean=auc[0],
                test_auc_std=auc[1],
                test_acc_mean=acc[0],
                test_acc_std=acc[1],
                test_f1_mean=f1[0],
                test_f1_std=f1[1],
            )
        )
    return summary
