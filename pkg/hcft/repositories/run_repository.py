"""
Run repository for the ``runs/<name>/`` directory layout.

::

    runs/<name>/config.echo
    runs/<name>/cohort/
    runs/<name>/reports.csv          one row per completed round
    runs/<name>/timing.csv           wall-clock per round
    runs/<name>/round_<t>/{mil.ckpt, encoder.ckpt, dstar.csv, report.csv,
                           froc_mil.csv, froc_head.csv, confidence.csv, config.echo}

``report.csv`` is written last in a round directory and marks the round as
complete.
"""

import csv
import io
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from hcft.core.config import parse_config_text
from hcft.core.logging import get_logger
from hcft.models.refinement import PatchDataset
from hcft.schemas.metrics import FrocCurve, FrocPoint
from hcft.schemas.report import RoundReport, format_value
from hcft.schemas.run import HeatmapRow
from hcft.utils.exceptions import ConfigurationException, DataException, FormatException

logger = get_logger(__name__)

CONFIG_ECHO = "config.echo"
REPORTS_FILE = "reports.csv"
TIMING_FILE = "timing.csv"
REPORT_FILE = "report.csv"
DSTAR_FILE = "dstar.csv"
CONFIDENCE_FILE = "confidence.csv"
MIL_CKPT = "mil.ckpt"
ENCODER_CKPT = "encoder.ckpt"
FROC_FILES = {"mil": "froc_mil.csv", "head": "froc_head.csv"}
CONFIDENCE_HEADER = ["slide_id", "patch_index", "attention", "p_Y", "score", "rank"]

_ROUND_DIR = re.compile(r"^round_(\d+)$")


def render_csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """Render comma-separated text with ``\\n`` line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def _read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def froc_rows(curve: FrocCurve) -> List[Tuple[float, float, float]]:
    return [(p.fpi, p.sensitivity, p.threshold) for p in curve.points]


def dstar_rows(dataset: PatchDataset) -> List[Tuple[str, int, int, str]]:
    return [(e.ref.slide_id, e.ref.patch_index, e.label, e.source.value) for e in dataset.entries]


class RunRepository:
    """Repository for run directories under one root."""

    def __init__(self, runs_dir: Path):
        self.runs_dir = Path(runs_dir)

    def run_dir(self, name: str) -> Path:
        return self.runs_dir / name

    def round_dir(self, name: str, t: int) -> Path:
        return self.run_dir(name) / f"round_{t}"

    def cohort_dir(self, name: str) -> Path:
        return self.run_dir(name) / "cohort"

    def exists(self, name: str) -> bool:
        return (self.run_dir(name) / CONFIG_ECHO).is_file()

    def list_runs(self) -> List[str]:
        """
        List run names.

        Returns:
            List[str]: Names of directories holding a config echo, sorted
        """
        if not self.runs_dir.is_dir():
            return []
        return sorted(p.name for p in self.runs_dir.iterdir() if (p / CONFIG_ECHO).is_file())

    # Writing

    def prepare(self, name: str, echo: str, resume: bool = False) -> Path:
        """
        Create the run directory and write its config echo.

        Args:
            name: Run name
            echo: Rendered ``RunConfig.echo()``
            resume: Keep existing rounds; the stored echo must match

        Raises:
            ConfigurationException: When resuming with a different configuration
        """
        run_dir = self.run_dir(name)
        echo_path = run_dir / CONFIG_ECHO
        if resume and echo_path.is_file():
            stored = echo_path.read_text(encoding="utf-8")
            if stored != echo:
                raise ConfigurationException(
                    f"run {name} was started with a different configuration; "
                    "resume with the stored config.echo"
                )
            return run_dir
        run_dir.mkdir(parents=True, exist_ok=True)
        echo_path.write_text(echo, encoding="utf-8")
        return run_dir

    def start_round(self, name: str, t: int, echo: str) -> Path:
        """Create (or clear a partial) round directory."""
        round_dir = self.round_dir(name, t)
        if round_dir.is_dir():
            for child in round_dir.iterdir():
                if child.is_file():
                    child.unlink()
        round_dir.mkdir(parents=True, exist_ok=True)
        (round_dir / CONFIG_ECHO).write_text(echo, encoding="utf-8")
        return round_dir

    def write_dstar(self, name: str, t: int, dataset: PatchDataset) -> None:
        text = render_csv(["slide_id", "patch_index", "label", "source"], dstar_rows(dataset))
        (self.round_dir(name, t) / DSTAR_FILE).write_text(text, encoding="utf-8")

    def write_confidence(self, name: str, t: int, rows: Iterable[Sequence[object]]) -> None:
        text = render_csv(CONFIDENCE_HEADER, rows)
        (self.round_dir(name, t) / CONFIDENCE_FILE).write_text(text, encoding="utf-8")

    def write_froc(self, name: str, t: int, score: str, curve: Optional[FrocCurve]) -> None:
        rows = froc_rows(curve) if curve is not None else []
        text = render_csv(["fpi", "sensitivity", "threshold"], rows)
        (self.round_dir(name, t) / FROC_FILES[score]).write_text(text, encoding="utf-8")

    def write_report(self, name: str, t: int, report: RoundReport) -> None:
        """Write ``report.csv`` for round ``t`` and rebuild ``reports.csv``."""
        text = render_csv(["metric", "value"], report.to_rows())
        (self.round_dir(name, t) / REPORT_FILE).write_text(text, encoding="utf-8")
        self._rebuild_summary(name)

    def _rebuild_summary(self, name: str) -> None:
        reports = [self.read_report(name, t) for t in self.completed_rounds(name)]
        if not reports:
            (self.run_dir(name) / REPORTS_FILE).unlink(missing_ok=True)
            return
        header = [key for key, _ in reports[-1].to_rows()]
        rows = []
        for report in reports:
            flat = report.to_flat()
            rows.append([flat.get(key, "NA") for key in header])
        (self.run_dir(name) / REPORTS_FILE).write_text(render_csv(header, rows), encoding="utf-8")

    def write_timing(self, name: str, t: int, seconds: float) -> None:
        """Record wall-clock for round ``t``, replacing any earlier entry."""
        path = self.run_dir(name) / TIMING_FILE
        entries: Dict[int, str] = {}
        if path.is_file():
            entries = {int(r["round"]): r["seconds"] for r in _read_csv(path)}
        entries[t] = f"{seconds:.3f}"
        path.write_text(
            render_csv(["round", "seconds"], sorted(entries.items())), encoding="utf-8"
        )

    def truncate_after(self, name: str, t: int) -> None:
        """Drop report files of rounds later than ``t`` (stale after a restart)."""
        for r in self._round_indices(name):
            if r > t:
                report = self.round_dir(name, r) / REPORT_FILE
                if report.is_file():
                    report.unlink()
        timing = self.run_dir(name) / TIMING_FILE
        if timing.is_file():
            kept = [(r["round"], r["seconds"]) for r in _read_csv(timing) if int(r["round"]) <= t]
            timing.write_text(render_csv(["round", "seconds"], kept), encoding="utf-8")
        self._rebuild_summary(name)

    # Reading

    def _round_indices(self, name: str) -> List[int]:
        run_dir = self.run_dir(name)
        if not run_dir.is_dir():
            return []
        found = []
        for child in run_dir.iterdir():
            match = _ROUND_DIR.match(child.name)
            if match and child.is_dir():
                found.append(int(match.group(1)))
        return sorted(found)

    def completed_rounds(self, name: str) -> List[int]:
        """Contiguous completed rounds starting at 0."""
        done = []
        for t in self._round_indices(name):
            if t != len(done) or not (self.round_dir(name, t) / REPORT_FILE).is_file():
                break
            done.append(t)
        return done

    def read_config(self, name: str) -> Dict[str, str]:
        path = self.run_dir(name) / CONFIG_ECHO
        if not path.is_file():
            raise DataException(f"run {name} has no {CONFIG_ECHO}")
        return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))

    def read_echo(self, name: str) -> str:
        return (self.run_dir(name) / CONFIG_ECHO).read_text(encoding="utf-8")

    def read_report(self, name: str, t: int) -> RoundReport:
        path = self.round_dir(name, t) / REPORT_FILE
        if not path.is_file():
            raise DataException(f"round {t} of run {name} has no report")
        rows = [(r["metric"], r["value"]) for r in _read_csv(path)]
        return RoundReport.from_rows(rows)

    def read_report_rows(self, name: str, t: int) -> Dict[str, str]:
        path = self.round_dir(name, t) / REPORT_FILE
        if not path.is_file():
            raise DataException(f"round {t} of run {name} has no report")
        return {r["metric"]: r["value"] for r in _read_csv(path)}

    def read_summary(self, name: str) -> List[Dict[str, str]]:
        path = self.run_dir(name) / REPORTS_FILE
        return _read_csv(path) if path.is_file() else []

    def read_froc(self, name: str, t: int, score: str) -> List[FrocPoint]:
        if score not in FROC_FILES:
            raise DataException(f"unknown score source {score}")
        path = self.round_dir(name, t) / FROC_FILES[score]
        if not path.is_file():
            raise DataException(f"round {t} of run {name} has no {score} FROC")
        try:
            return [
                FrocPoint(
                    fpi=float(r["fpi"]),
                    sensitivity=float(r["sensitivity"]),
                    threshold=float(r["threshold"]),
                )
                for r in _read_csv(path)
            ]
        except (KeyError, ValueError) as e:
            raise FormatException(f"bad FROC file: {e}", path=str(path)) from e

    def read_heatmap(self, name: str, t: int, slide_id: str) -> List[HeatmapRow]:
        path = self.round_dir(name, t) / CONFIDENCE_FILE
        if not path.is_file():
            raise DataException(f"round {t} of run {name} has no {CONFIDENCE_FILE}")
        return [
            HeatmapRow(
                slide_id=r["slide_id"],
                patch_index=int(r["patch_index"]),
                attention=float(r["attention"]),
                p_y=float(r["p_Y"]),
                score=float(r["score"]),
                rank=int(r["rank"]),
            )
            for r in _read_csv(path)
            if r["slide_id"] == slide_id
        ]

    def mil_checkpoint(self, name: str, t: int) -> Path:
        return self.round_dir(name, t) / MIL_CKPT

    def encoder_checkpoint(self, name: str, t: int) -> Path:
        return self.round_dir(name, t) / ENCODER_CKPT
