import hashlib
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from nirom.cli import run
from nirom.evaluation import CELL_COLUMNS, EvalReport
from nirom.storage import read_csv

TINY = str(Path(__file__).parent / "data" / "tiny.ini")
VERBS = ("simulate", "reduce", "train", "evaluate", "report")


def tree_digests(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "out"
    codes = {verb: run([verb, "--config", TINY, "--out", str(out)]) for verb in VERBS}
    return out, codes


def test_pipeline_succeeds(pipeline):
    out, codes = pipeline
    assert codes == {verb: 0 for verb in VERBS}
    root = out / "synthetic_nonlinear"
    assert len(list((root / "snapshots" / "SPS").glob("traj_*.bin"))) == 6
    assert (root / "bases" / "DPS.bin").exists()
    assert (root / "models" / "DPS" / "rknn" / "nr03" / "seed01.bin").exists()
    assert (root / "models" / "DPS" / "direct_tau" / "nr03" / "seed00.bin").exists()
    for name in ("report.csv", "tables.txt", "step_study.csv", "sps_vs_dps.csv", "spectra.csv",
                 "error_curves.csv"):
        assert (out / "report" / name).exists()


def test_report_has_one_row_per_cell(pipeline):
    out, _ = pipeline
    header, rows = read_csv(out / "report" / "report.csv")
    assert header == CELL_COLUMNS
    # 2 samplings x 2 architectures x 2 N_r x 2 tests
    assert len(rows) == 16
    report = EvalReport.read_csv(out / "report" / "report.csv")
    assert all(c.ok for c in report.cells)
    text = (out / "report" / "tables.txt").read_text()
    assert "SPS versus DPS" in text and "MLP versus RKNN" in text


def test_step_study_rows(pipeline):
    out, _ = pipeline
    header, rows = read_csv(out / "report" / "step_study.csv")
    assert [r[header.index("factor")] for r in rows if r[header.index("test")] == "constant"] \
        == [1.0, 0.5]


def test_rerun_reproduces_bytes(pipeline, tmp_path):
    out, _ = pipeline
    again = tmp_path / "out"
    for verb in VERBS:
        assert run([verb, "--config", TINY, "--out", str(again)]) == 0
    assert tree_digests(again) == tree_digests(out)


def test_resume_after_deleting_a_model(pipeline, tmp_path):
    out, _ = pipeline
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    target = copy / "synthetic_nonlinear" / "models" / "SPS" / "direct" / "nr01" / "seed01.bin"
    target.unlink()
    assert run(["train", "--config", TINY, "--out", str(copy)]) == 0
    assert tree_digests(copy) == tree_digests(out)


def test_tampered_input_is_rejected(pipeline, tmp_path):
    out, _ = pipeline
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    traj = copy / "synthetic_nonlinear" / "snapshots" / "DPS" / "traj_000.bin"
    blob = bytearray(traj.read_bytes())
    blob[-3] ^= 0x01
    traj.write_bytes(bytes(blob))
    assert run(["reduce", "--config", TINY, "--out", str(copy)]) == 4


def test_missing_input(tmp_path):
    assert run(["reduce", "--config", TINY, "--out", str(tmp_path / "empty")]) == 1
    assert run(["evaluate", "--config", TINY, "--out", str(tmp_path / "empty")]) == 1


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(Path(TINY).read_text().replace("n_r = 1, 3", "n_r = 1, 99"))
    assert run(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert run(["simulate", "--config", str(tmp_path / "nope.ini"),
                "--out", str(tmp_path / "o")]) == 2
    assert run(["simulate", "--out", str(tmp_path / "o")]) == 2
    assert run(["explode"]) == 2


def test_foreign_output_directory_is_refused(pipeline, tmp_path):
    out, _ = pipeline
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    other = tmp_path / "other.ini"
    other.write_text(Path(TINY).read_text().replace("epochs = 20", "epochs = 21"))
    assert run(["train", "--config", str(other), "--out", str(copy)]) == 4


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "nirom", "--help"], capture_output=True,
                            text=True)
    assert result.returncode == 0
    assert "simulate" in result.stdout
