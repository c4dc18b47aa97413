import subprocess
import sys
from pathlib import Path

import pytest

from pedkd.cli import main
from pedkd.config import load_config

SMALL = """\
data: {n_scenes: 120, n_traj_scenes: 120, n_expert_scenes: 120}
distill: {lr0: 0.003, epochs: 2, expert_epochs: 1, traj_epochs: 1}
student: {conv_widths: [4, 8, 8], embed_dim: 8}
ensemble: {epochs: 2}
trajectory: {epochs: 2, hidden: 8}
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def run_dir(out, cfg_path, seed=0):
    return out / f"{load_config(cfg_path).hash()}-s{seed}"


def test_unknown_flag_is_usage_error_without_artifacts(tmp_path, capsys):
    assert main(["gen-data", "--bogus", "--out", str(tmp_path / "runs")]) == 2
    assert main(["no-such-command"]) == 2
    assert not (tmp_path / "runs").exists()
    assert "usage" in capsys.readouterr().err


def test_bad_seed_is_usage_error(tmp_path):
    assert main(["gen-data", "--seed", "-3", "--out", str(tmp_path)]) == 2


def test_bad_config_exits_1(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("data: {n_scenes: 5}\n")
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "runs")]) == 1


def test_mine_labels_on_small_corpus(tmp_path):
    corpus = tmp_path / "ann.tsv"
    corpus.write_text("a\tpedestrian crossing\nb\tpedestrian waiting\nc\tpedestrian crossing\n")
    assert main(["mine-labels", "--corpus", str(corpus), "--out", str(tmp_path / "runs")]) == 0
    vocab = next((tmp_path / "runs").glob("*/vocab.tsv")).read_text().splitlines()
    assert vocab[0] == "pedestrian\t3"
    assert vocab[1] == "crossing\t2"


def test_missing_prerequisite_names_the_step(tmp_path, capsys):
    assert main(["train-distill", "--out", str(tmp_path)]) == 1
    assert "pedkd mine-labels" in capsys.readouterr().err


def test_gradcheck_passes(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    rep = next(tmp_path.glob("*/reports/gradcheck.txt")).read_text()
    assert "pass=true" in rep.splitlines()


def test_refuses_overwrite_unless_forced(tmp_path, small_cfg, capsys):
    args = ["gen-data", "--config", str(small_cfg), "--out", str(tmp_path)]
    assert main(args) == 0
    first = (run_dir(tmp_path, small_cfg) / "data" / "annotations.tsv").read_bytes()
    assert main(args) == 1
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0
    assert (run_dir(tmp_path, small_cfg) / "data" / "annotations.tsv").read_bytes() == first


def pipeline(out: Path, cfg: Path):
    common = ["--config", str(cfg), "--out", str(out)]
    steps = [["gen-data"], ["mine-labels"], ["train-distill"], ["train-distill", "--backbone", "attention"],
             ["eval-text"], ["train-experts"], ["train-ensemble"], ["train-traj"], ["eval-traj"], ["report"]]
    for step in steps:
        assert main(step + common) == 0, step


@pytest.mark.slow
def test_full_pipeline_is_byte_reproducible(tmp_path, small_cfg):
    pipeline(tmp_path / "a", small_cfg)
    pipeline(tmp_path / "b", small_cfg)
    ra, rb = run_dir(tmp_path / "a", small_cfg), run_dir(tmp_path / "b", small_cfg)
    names = sorted(p.name for p in (ra / "reports").glob("*.txt"))
    assert names == ["eval-text-conv.txt", "eval-traj.txt", "train-distill-attention.txt", "train-distill-conv.txt",
                     "train-ensemble-all.txt", "train-experts.txt", "train-traj.txt"]
    for name in names:
        assert (ra / "reports" / name).read_bytes() == (rb / "reports" / name).read_bytes(), name
    assert (ra / "report.txt").read_bytes() == (rb / "report.txt").read_bytes()
    assert (ra / "config.yaml").exists()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "pedkd.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout
