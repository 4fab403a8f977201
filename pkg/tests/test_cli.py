import json
import subprocess
import sys

import pytest

from o2c.cli import main


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["scenario", "benign", "--out", str(d)]) == 0
    assert main(["scenario", "cfihijack", "--out", str(d)]) == 0
    pre = d / "benign-0"
    assert main(["analyze", "--ir", f"{pre}.o2cir.jsonl", "--cfg", f"{pre}.o2ccfg.json",
                 "--spec", f"{pre}.o2cspec.json", "--out", str(d)]) == 0
    return d


def _replay(d, name, *extra):
    pre = d / name
    return main(["replay", "--trace", f"{pre}.o2ctrace.jsonl", "--plan", str(d / "plan.o2cplan.json"),
                 "--spec", f"{pre}.o2cspec.json", "--cfg", f"{pre}.o2ccfg.json", "--out", str(d), *extra])


def test_benign_replay_exits_zero(bundle_dir):
    assert _replay(bundle_dir, "benign-0", "--model", str(bundle_dir / "benign-0.o2cmodel.json")) == 0
    summary = json.loads((bundle_dir / "replay.report.json").read_text())
    assert summary["deny"] == 0


def test_attack_replay_exits_one(bundle_dir):
    assert _replay(bundle_dir, "cfihijack-0", "--model", str(bundle_dir / "cfihijack-0.o2cmodel.json")) == 1
    lines = (bundle_dir / "verdicts.o2cverdicts.jsonl").read_text().splitlines()
    assert any(json.loads(l)["reason"] == "CfiViolation" for l in lines)


def test_missing_model_exits_three(bundle_dir, capsys):
    assert _replay(bundle_dir, "benign-0") == 3
    assert "audition" in capsys.readouterr().err


def test_forced_phase_one_needs_no_model(bundle_dir):
    assert _replay(bundle_dir, "benign-0", "--phase", "1") == 0


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    assert main(["scenario", "world", "--types", "4", "--rows", "6", "--out", str(d)]) == 0
    assert main(["profile", "--trace", str(d / "world.o2ctrace.jsonl"), "--spec", str(d / "world.o2cspec.json"),
                 "--feature-words", "8", "--out", str(d)]) == 0
    return d / "dataset.o2cdata.csv"


def test_train_and_report(dataset, tmp_path, capsys):
    assert main(["train", "--data", str(dataset), "--folds", "3", "--baseline", "--sweep",
                 "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "train.report.json").read_text())
    assert set(report["cv"]) == {"type", "compartment"} and "nearest_centroid" in report
    assert set(report["sweep"]) == {"3", "7", "10", "14"}
    capsys.readouterr()
    assert main(["report", str(tmp_path / "train.report.json")]) == 0
    assert "macro-F1" in capsys.readouterr().out


def test_too_many_folds(dataset, tmp_path):
    assert main(["train", "--data", str(dataset), "--folds", "1000", "--out", str(tmp_path)]) == 2


def test_depth_over_cap(dataset, tmp_path, capsys):
    assert main(["train", "--data", str(dataset), "--max-depth", "15", "--out", str(tmp_path)]) == 2
    assert "exceeds" in capsys.readouterr().err


def test_report_on_plan_and_stats(bundle_dir, capsys):
    assert main(["report", str(bundle_dir / "plan.o2cplan.json")]) == 0
    assert main(["report", str(bundle_dir / "analyze.report.json")]) == 0
    out = capsys.readouterr().out
    assert out.count("\n") > 4


def test_report_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"hello": 1}')
    assert main(["report", str(p)]) == 2


def test_unknown_scenario(tmp_path, capsys):
    assert main(["scenario", "nonsense", "--out", str(tmp_path)]) == 2
    assert "unknown scenario" in capsys.readouterr().err


def test_missing_input_file(tmp_path):
    assert main(["profile", "--trace", str(tmp_path / "nope"), "--spec", str(tmp_path / "nope")]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "o2c", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("o2c ")
