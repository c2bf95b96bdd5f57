import json
import subprocess
import sys
from pathlib import Path

import pytest

import ttrl.trainer as trainer
from ttrl.cli import main


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "data.jsonl"
    assert main(["gen", "--n", "30", "--k", "4", "--signal", "1.0", "--seed", "3", "--truth-weights", "1,2,3,6", "--out", str(path)]) == 0
    return path


def run(data, out, *extra):
    return main(["run", "--data", str(data), "--out-dir", str(out), "--m-votes", "8", "--global-batch", "4", *extra])


def test_gen_is_byte_identical(tmp_path, data):
    again = tmp_path / "again.jsonl"
    main(["gen", "--n", "30", "--k", "4", "--signal", "1.0", "--seed", "3", "--truth-weights", "1,2,3,6", "--out", str(again)])
    assert data.read_bytes() == again.read_bytes()
    assert len(data.read_text().splitlines()) == 30


def test_gen_argument_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--n", "5", "--k", "4", "--signal", "1", "--seed", "0"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--n", "0", "--k", "4", "--signal", "1", "--seed", "0", "--out", str(tmp_path / "x")])
    assert exc.value.code != 0


def test_run_writes_all_artifacts(tmp_path, data):
    out = tmp_path / "r"
    assert run(data, out, "--steps", "100", "--weight", "off", "--mas", "1") == 0
    records = [json.loads(x) for x in (out / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in records] == list(range(1, 101))
    assert all(set(r["attempts_histogram"]) == {"1"} for r in records)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["weight_kind"] == "off" and manifest["config"]["mas_attempts"] == 1
    for path in manifest["artifacts"].values():
        assert Path(path).exists()


def test_manifest_replay_is_byte_identical(tmp_path, data):
    first = tmp_path / "a"
    assert run(data, first, "--steps", "10") == 0
    second = tmp_path / "b"
    assert main(["run", "--manifest", str(first / "manifest.json"), "--out-dir", str(second)]) == 0
    assert (first / "metrics.jsonl").read_bytes() == (second / "metrics.jsonl").read_bytes()
    assert (first / "labels.jsonl").read_bytes() == (second / "labels.jsonl").read_bytes()


def test_interrupted_run_resumes(tmp_path, data, monkeypatch):
    full = tmp_path / "full"
    assert run(data, full, "--steps", "12", "--checkpoint-every", "4") == 0

    real = trainer.adaptation_step

    def crashing(policy, reference, labels, batch_ids, config, step):
        if step == 9:
            raise trainer.TrainingAborted("simulated crash")
        return real(policy, reference, labels, batch_ids, config, step)

    cut = tmp_path / "cut"
    monkeypatch.setattr(trainer, "adaptation_step", crashing)
    assert run(data, cut, "--steps", "12", "--checkpoint-every", "4") == 1
    assert not (cut / "manifest.json").exists()
    assert main(["analyze", str(cut)]) != 0
    monkeypatch.setattr(trainer, "adaptation_step", real)
    assert run(data, cut, "--steps", "12", "--checkpoint-every", "4", "--resume") == 0
    assert (full / "metrics.jsonl").read_bytes() == (cut / "metrics.jsonl").read_bytes()


def test_analyze_single_run(tmp_path, data):
    out = tmp_path / "r"
    assert run(data, out, "--steps", "2") == 0
    assert main(["analyze", str(out)]) == 0
    summary = json.loads((out / "regression.json").read_text())
    assert {"slope", "intercept", "pearson_r", "points_used"} <= set(summary)
    assert (out / "bins.jsonl").exists() and (out / "comparison.jsonl").exists()
    assert main(["analyze", str(out), "--format", "csv", "--out", str(tmp_path / "csv")]) == 0
    assert (tmp_path / "csv" / "bins.csv").read_text().startswith("lower,upper,count,mean_accuracy")


def test_analyze_grid(tmp_path, data):
    dirs = []
    for weight, mas in (("off", "1"), ("off", "3"), ("exp", "1"), ("exp", "3")):
        d = tmp_path / f"{weight}{mas}"
        assert run(data, d, "--steps", "2", "--weight", weight, "--mas", mas) == 0
        dirs.append(str(d))
    assert main(["analyze", *dirs, "--grid", "--out", str(tmp_path / "grid")]) == 0
    rows = [json.loads(x) for x in (tmp_path / "grid" / "grid.jsonl").read_text().splitlines()]
    assert [r["arm"] for r in rows] == ["G-MV", "+M", "+C", "+C+M"]


def test_config_file_with_flag_override(tmp_path, data):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps = 3\nweight_kind = linear\nbeta = 0.04\nm_votes = 8\n")
    out = tmp_path / "r"
    assert main(["run", "--data", str(data), "--out-dir", str(out), "--config", str(cfg), "--steps", "5"]) == 0
    c = json.loads((out / "manifest.json").read_text())["config"]
    assert (c["steps"], c["weight_kind"], c["grpo"]["beta"], c["m_votes"]) == (5, "linear", 0.04, 8)
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert main(["run", "--data", str(data), "--out-dir", str(out), "--config", str(bad)]) == 2


def test_invalid_run_settings(tmp_path, data):
    assert run(data, tmp_path / "r", "--steps", "5", "--report-step", "6") == 2
    assert main(["run", "--data", str(tmp_path / "missing.jsonl"), "--out-dir", str(tmp_path / "r")]) == 2


def test_baseline_command(tmp_path, data):
    out = tmp_path / "b.json"
    assert main(["baseline", "--data", str(data), "--m-votes", "8", "--out", str(out)]) == 0
    record = json.loads(out.read_text())
    assert 0 <= record["di_accuracy"] <= 1 and 0 <= record["dimv_accuracy"] <= 1


def test_module_entry_point(tmp_path):
    out = tmp_path / "d.jsonl"
    proc = subprocess.run(
        [sys.executable, "-m", "ttrl", "gen", "--n", "3", "--k", "2", "--signal", "0.5", "--seed", "1", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert len(out.read_text().splitlines()) == 3
