"""
Tests for the command-line interface.
"""

from pathlib import Path

import pytest

from hcft.cli import main
from hcft.models.bag import Split
from hcft.repositories.cohort_repository import CohortRepository
from hcft.schemas.config import RunConfig


@pytest.fixture
def config_file(tmp_path: Path, fast_config: RunConfig) -> Path:
    """The fast configuration written as a config file."""
    path = tmp_path / "fast.cfg"
    path.write_text(fast_config.echo(), encoding="utf-8")
    return path


@pytest.fixture
def cohort_dir(tmp_path: Path, config_file: Path, capsys) -> Path:
    """A generated and split cohort on disk."""
    out = tmp_path / "cohort"
    assert main(["gen-data", "--config", str(config_file), "--out", str(out)]) == 0
    assert main(["split", "--config", str(config_file), "--cohort", str(out)]) == 0
    capsys.readouterr()
    return out


def test_gen_data(tmp_path: Path, config_file: Path, capsys):
    """Test gen-data writes the cohort and lists every bag."""
    out = tmp_path / "generated"
    assert main(["gen-data", "--config", str(config_file), "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "slide_id,label,instances"
    assert len(lines) == 1 + 16
    assert len(CohortRepository(out).load()) == 16


def test_split_assigns_every_bag(cohort_dir: Path):
    """Test split stores a train, val and test split for the cohort."""
    bags = CohortRepository(cohort_dir).load()
    assert {b.split for b in bags} == {Split.TRAIN, Split.VAL, Split.TEST}


def test_flags_override_config_file(tmp_path: Path, config_file: Path, capsys):
    """Test command-line flags win over file values."""
    out = tmp_path / "generated"
    argv = ["gen-data", "--config", str(config_file), "--out", str(out), "--bags-per-class", "3,4"]
    assert main(argv) == 0
    assert len(capsys.readouterr().out.splitlines()) == 1 + 7


def test_train_mil_and_eval(tmp_path: Path, config_file: Path, cohort_dir: Path, capsys):
    """Test the stage commands chain through a stored MIL checkpoint."""
    ckpt = tmp_path / "mil.ckpt"
    argv = ["train-mil", "--config", str(config_file), "--cohort", str(cohort_dir), "--out", str(ckpt)]
    assert main(argv) == 0
    assert ckpt.is_file()
    assert capsys.readouterr().out.splitlines()[0] == "metric,value"

    argv = ["eval", "--config", str(config_file), "--cohort", str(cohort_dir), "--mil", str(ckpt)]
    assert main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "metric,value"
    assert [line.split(",")[0] for line in lines[1:3]] == ["val_acc", "val_auc"]

    argv = ["dump-confidence", "--config", str(config_file), "--cohort", str(cohort_dir), "--mil", str(ckpt)]
    assert main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "slide_id,patch_index,attention,p_Y,score,rank"

    argv = ["refine", "--config", str(config_file), "--cohort", str(cohort_dir), "--mil", str(ckpt)]
    assert main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "slide_id,patch_index,label,source"
    assert len(lines) > 1


def test_run_command(config_file: Path, capsys):
    """Test run prints one row per completed round."""
    assert main(["run", "--config", str(config_file), "--iterations", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "round,val_auc,test_auc,test_acc,test_f1,dstar_size"
    assert len(lines) == 2
    assert lines[1].startswith("0,")


def test_unknown_config_key_exits_2(tmp_path: Path):
    """Test an unknown configuration key is a configuration error."""
    path = tmp_path / "bad.cfg"
    path.write_text("n_classes = 2\nnot_a_key = 1\n", encoding="utf-8")
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "c")]) == 2


def test_invalid_value_exits_2(tmp_path: Path, config_file: Path):
    """Test an out-of-range value is a configuration error."""
    assert main(["gen-data", "--config", str(config_file), "--theta", "1.5", "--out", str(tmp_path / "c")]) == 2


def test_bad_sweep_grid_exits_2(config_file: Path):
    """Test a malformed grid list is a configuration error."""
    assert main(["sweep", "--config", str(config_file), "--k0-grid", "two"]) == 2


def test_missing_cohort_exits_3(tmp_path: Path, config_file: Path):
    """Test reading a cohort that does not exist is a data error."""
    assert main(["split", "--config", str(config_file), "--cohort", str(tmp_path / "nowhere")]) == 3
