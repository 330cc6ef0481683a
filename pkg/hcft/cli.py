"""
Command-line interface.

Every subcommand accepts ``--config FILE`` plus one ``--<key>`` flag per run
configuration key; flags override file values. CSV results go to stdout and
logs to stderr. Exit codes: 0 success, 2 configuration error, 3 data error,
4 training error.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from hcft.core.config import load_config_file, settings
from hcft.core.logging import get_logger, setup_logging
from hcft.models.bag import Bag, CohortIndex, Split, bags_in_split
from hcft.models.encoder import EncoderModel
from hcft.models.mil import MILModel
from hcft.models.refinement import RefinementState
from hcft.repositories.checkpoint_repository import CheckpointRepository
from hcft.repositories.cohort_repository import CohortRepository
from hcft.repositories.run_repository import CONFIDENCE_HEADER, RunRepository, dstar_rows, froc_rows, render_csv
from hcft.schemas.config import RunConfig
from hcft.schemas.report import SweepRow
from hcft.services.cohort_service import generate_cohort, split_cohort
from hcft.services.confidence_service import confidence_rows, confidence_table, init_pseudo_labels
from hcft.services.finetune_service import init_encoder, reextract, train_encoder
from hcft.services.mil_service import evaluate_loss, init_mil, train_mil
from hcft.services.pipeline_service import PipelineService, evaluate_models, training_view
from hcft.services.refine_service import RefineOptions, audit_severity, build_patch_dataset, run_refinement
from hcft.utils.exceptions import ArgumentException, ConfigurationException, HCFTException

logger = get_logger(__name__)

DSTAR_HEADER = ["slide_id", "patch_index", "label", "source"]


def _config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then CLI flags."""
    file_values: Dict[str, Any] = load_config_file(args.config) if args.config else {}
    flags = {key: getattr(args, key, None) for key in RunConfig.model_fields}
    return RunConfig.from_sources(file_values, flags)


def _emit(header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    sys.stdout.write(render_csv(header, rows))


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationException(f"expected comma-separated integers, got '{text}'") from e


def _cohort(args: argparse.Namespace) -> List[Bag]:
    if not args.cohort:
        raise ConfigurationException("--cohort is required")
    return CohortRepository(Path(args.cohort)).load()


def _encoder(args: argparse.Namespace, config: RunConfig) -> EncoderModel:
    """Encoder from ``--encoder`` or the seeded round-0 encoder."""
    if getattr(args, "encoder", None):
        return CheckpointRepository().load_encoder(Path(args.encoder))
    return init_encoder(config.seed, config.d_raw, config.d_emb, config.n_classes, config.encoder_init_scale)


def _embedded(args: argparse.Namespace, config: RunConfig) -> List[Bag]:
    """Cohort with embeddings from ``--encoder``, stored ones, or the round-0 encoder."""
    bags = _cohort(args)
    if getattr(args, "encoder", None) or any(b.embeddings is None for b in bags):
        bags = reextract(_encoder(args, config), bags)
    return bags


def _mil(args: argparse.Namespace) -> MILModel:
    if not args.mil:
        raise ConfigurationException("--mil is required")
    return CheckpointRepository().load_mil(Path(args.mil))


def _refine(args: argparse.Namespace, config: RunConfig, bags: List[Bag]) -> RefinementState:
    train = bags_in_split(training_view(bags), Split.TRAIN)
    split, _ = init_pseudo_labels(_mil(args), train, args.round, config.k0)
    options = RefineOptions(
        n_classes=config.n_classes,
        clusters=config.clusters,
        theta=config.theta,
        seed=config.seed,
        restarts=config.kmeans_restarts,
        max_iter=config.kmeans_max_iter,
        enable_mining=config.enable_mining,
        enable_searching=config.enable_searching,
        enable_cleaning=config.enable_cleaning,
        round_index=args.round + 1,
    )
    return run_refinement(split, CohortIndex(train), options)


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _config(args)
    out = Path(args.out) if args.out else config.run_dir / "cohort"
    bags = generate_cohort(config.cohort_spec())
    CohortRepository(out).save(bags)
    _emit(["slide_id", "label", "instances"], [(b.slide_id, b.label, len(b)) for b in bags])
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    config = _config(args)
    bags = split_cohort(_cohort(args), config.split_ratios, config.data_seed)
    CohortRepository(Path(args.out or args.cohort)).save(bags)
    _emit(["slide_id", "label", "split"], [(b.slide_id, b.label, b.split.value) for b in bags])
    return 0


def cmd_train_mil(args: argparse.Namespace) -> int:
    config = _config(args)
    view = training_view(_embedded(args, config))
    train, val = bags_in_split(view, Split.TRAIN), bags_in_split(view, Split.VAL)
    model, history = train_mil(
        init_mil(config.seed, config.d_emb, config.mil_hyper(), config.n_classes, args.round),
        train,
        val,
        config.mil_hyper(),
        seed=config.seed,
        round_index=args.round,
    )
    if args.out:
        CheckpointRepository().save_mil(model, Path(args.out))
    val_loss, val_acc = evaluate_loss(model, val)
    _emit(
        ["metric", "value"],
        [
            ("epochs", history.epochs_run),
            ("best_epoch", history.best_epoch),
            ("val_loss", val_loss),
            ("val_acc", val_acc),
        ],
    )
    return 0


def cmd_dump_confidence(args: argparse.Namespace) -> int:
    config = _config(args)
    table = confidence_table(_mil(args), training_view(_embedded(args, config)), args.round, config.k0)
    _emit(CONFIDENCE_HEADER, confidence_rows(table))
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    config = _config(args)
    state = _refine(args, config, _embedded(args, config))
    labels = np.array([label for _, label in sorted(state.high.items())], dtype=np.int64)
    assignment = state.first_clusters.assignment
    rows = []
    for j in range(state.first_clusters.n_clusters):
        for a in state.first.classes:
            count = int(np.count_nonzero((assignment == j) & (labels == a)))
            rows.append((j, a, count, float(state.first.fractions[j, a])))
    _emit(["cluster_id", "class", "assigned_count", "fraction"], rows)
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    config = _config(args)
    bags = _embedded(args, config)
    state = _refine(args, config, bags)
    dataset = build_patch_dataset(
        state.cleaned_high, state.n_final, config.n_classes, from_high=state.n_middle_h.keys()
    )
    audit_severity(dataset, CohortIndex(bags))
    _emit(DSTAR_HEADER, dstar_rows(dataset))
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    config = _config(args)
    bags = _embedded(args, config)
    state = _refine(args, config, bags)
    dataset = build_patch_dataset(
        state.cleaned_high, state.n_final, config.n_classes, from_high=state.n_middle_h.keys()
    )
    index = CohortIndex(training_view(bags))
    audit_severity(dataset, index)
    encoder, history = train_encoder(
        _encoder(args, config),
        dataset,
        index,
        config.encoder_hyper(),
        seed=config.seed,
        round_index=args.round + 1,
    )
    if args.out:
        CheckpointRepository().save_encoder(encoder, Path(args.out))
    _emit(
        ["metric", "value"],
        [
            ("dstar_size", len(dataset)),
            ("epochs", history.epochs_run),
            ("best_epoch", history.best_epoch),
            ("best_val_loss", history.best_val_loss),
        ],
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    bags = _embedded(args, config)
    evaluation = evaluate_models(_mil(args), _encoder(args, config), bags, config.n_classes)
    if args.froc_out:
        curve = evaluation.mil_froc if args.score == "mil" else evaluation.head_froc
        rows = froc_rows(curve) if curve is not None else []
        Path(args.froc_out).write_text(render_csv(["fpi", "sensitivity", "threshold"], rows), encoding="utf-8")
    _emit(["metric", "value"], evaluation.rows())
    return 0


def cmd_froc(args: argparse.Namespace) -> int:
    config = _config(args)
    bags = _embedded(args, config)
    evaluation = evaluate_models(_mil(args), _encoder(args, config), bags, config.n_classes)
    curve = evaluation.mil_froc if args.score == "mil" else evaluation.head_froc
    if curve is None:
        raise ArgumentException("FROC is undefined: no test instance carries tumor truth")
    _emit(["fpi", "sensitivity", "threshold"], froc_rows(curve))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _config(args)
    reports = PipelineService(RunRepository(config.runs_dir)).run(config, resume=args.resume)
    _emit(
        ["round", "val_auc", "test_auc", "test_acc", "test_f1", "dstar_size"],
        [(r.round, r.val_auc, r.test_auc, r.test_acc, r.test_f1, r.dstar_size) for r in reports],
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config(args)
    k0_values = _int_list(args.k0_grid) if args.k0_grid else [config.k0]
    cluster_values = _int_list(args.clusters_grid) if args.clusters_grid else [config.clusters]
    seeds = _int_list(args.seeds) if args.seeds else [config.seed]
    rows = PipelineService(RunRepository(config.runs_dir)).sweep(
        config, k0_values, cluster_values, seeds, jobs=args.jobs
    )
    _emit(SweepRow.header(), [row.cells() for row in rows])
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run(
        "hcft.main:app",
        host=args.host or settings.API_HOST,
        port=args.port or settings.API_PORT,
        log_level=settings.LOG_LEVEL.lower(),
    )
    return 0


def _config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run-config file of 'key = value' lines")
    group = parser.add_argument_group("configuration keys")
    for key, info in RunConfig.model_fields.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE", help=info.description)


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys (file or --flag):\n  " + "\n  ".join(RunConfig.help_lines())
    parser = argparse.ArgumentParser(
        prog="hcft",
        description="Heuristic clustering-driven feature fine-tuning for MIL on feature-vector bags",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str, **flags: bool) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
        _config_flags(p)
        if flags.get("cohort"):
            p.add_argument("--cohort", help="cohort directory")
        if flags.get("models"):
            p.add_argument("--mil", help="MIL checkpoint")
            p.add_argument("--encoder", help="encoder checkpoint (default: seeded round-0 encoder)")
        if flags.get("round"):
            p.add_argument("--round", type=int, default=0, help="schedule iteration t")
        if flags.get("out"):
            p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "generate a synthetic cohort", out=True)
    add("split", cmd_split, "assign stratified train/val/test splits", cohort=True, out=True)
    p = add("train-mil", cmd_train_mil, "train the MIL aggregator", cohort=True, round=True, out=True)
    p.add_argument("--encoder", help="encoder checkpoint (default: stored or round-0 embeddings)")
    add("dump-confidence", cmd_dump_confidence, "print per-instance confidence", cohort=True, models=True, round=True)
    add("cluster", cmd_cluster, "print the first clustering of T_h", cohort=True, models=True, round=True)
    add("refine", cmd_refine, "print the refined dataset D*", cohort=True, models=True, round=True)
    add("finetune", cmd_finetune, "fine-tune the encoder on D*", cohort=True, models=True, round=True, out=True)
    for name, func, help_text in (
        ("eval", cmd_eval, "print bag and patch metrics"),
        ("froc", cmd_froc, "print a FROC curve"),
    ):
        p = add(name, func, help_text, cohort=True, models=True)
        p.add_argument("--score", choices=["mil", "head"], default="mil", help="score source")
        if name == "eval":
            p.add_argument("--froc-out", help="also write the FROC curve here")
    p = add("run", cmd_run, "run the full iterative pipeline")
    p.add_argument("--resume", action="store_true", help="continue after the last completed round")
    p = add("sweep", cmd_sweep, "grid over K0 and C (and seeds)")
    p.add_argument("--k0-grid", help="comma-separated K0 values")
    p.add_argument("--clusters-grid", help="comma-separated C values")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("serve", help="serve the read-only report API")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(args.log_level)
    try:
        return args.func(args)
    except HCFTException as e:
        logger.error("Command failed", command=args.command, error=e.detail, exit_code=e.exit_code)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
