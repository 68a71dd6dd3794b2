import json

import pytest
import yaml

from bts.cli import main
from bts.config import load_config
from bts.synthetic import write_icbhi_tree

STUB_FLAGS = ["--encoder", "stub", "--d", "8", "--epochs", "2", "--seeds", "0,1", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    split = write_icbhi_tree(base / "data", n_patients=4, cycles_per_recording=4)
    out = base / "out"
    code = main(["prepare", "--dataset-root", str(base / "data"), "--split-list", str(split), "--output-dir", str(out)])
    assert code == 0
    return base, out


def run(out, command, *extra):
    return main([command, "--output-dir", str(out), *STUB_FLAGS, *extra])


def test_prepare_outputs(prepared, capsys):
    base, out = prepared
    assert (out / "manifest.jsonl").is_file()
    assert (out / "config.yaml").is_file()
    assert len((out / "cache_index.jsonl").read_text().splitlines()) == 16
    assert len(list((out / "cache").glob("*.npy"))) == 16
    assert len((out / "descriptions_All.jsonl").read_text().splitlines()) == 16


def test_prepare_prints_count_check(tmp_path, capsys):
    split = write_icbhi_tree(tmp_path / "data", n_patients=2, cycles_per_recording=2)
    assert main(["prepare", "--dataset-root", str(tmp_path / "data"), "--split-list", str(split), "--output-dir", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "counts differ from the official release: 2 train / 2 test (official 4142 / 2756)" in out


def test_prepare_empty_directory(tmp_path, capsys):
    (tmp_path / "split.txt").write_text("")
    code = main(["prepare", "--dataset-root", str(tmp_path), "--split-list", str(tmp_path / "split.txt"), "--output-dir", str(tmp_path / "o")])
    assert code == 10
    assert capsys.readouterr().err.startswith("error[MissingAnnotation]:")


def test_train_then_resume(prepared, capsys):
    _, out = prepared
    assert run(out, "train") == 0
    first = capsys.readouterr().out
    assert "BTS" in first and "run directory:" in first
    (run_dir,) = [p for p in (out / "runs").iterdir() if json.loads((p / "config.json").read_text())["model"]["mode"] == "Fused"]
    assert (run_dir / "run_config.yaml").is_file()
    stamp = (run_dir / "report.json").stat().st_mtime_ns
    assert run(out, "train", "--resume") == 0
    assert "already complete; nothing to do" in capsys.readouterr().out
    assert (run_dir / "report.json").stat().st_mtime_ns == stamp


def test_train_is_byte_reproducible(prepared):
    _, out = prepared
    reports = []
    for _ in range(2):
        assert run(out, "train", "--seeds", "3", "--epochs", "1") == 0
        (path,) = [p / "report.json" for p in (out / "runs").iterdir() if (p / "3").is_dir()]
        reports.append(path.read_bytes())
    assert reports[0] == reports[1]


def test_train_missing_checkpoint(prepared, capsys):
    _, out = prepared
    code = main(["train", "--output-dir", str(out), "--encoder", "clap", "--checkpoint", "/nope/ckpt"])
    assert code == 40
    assert capsys.readouterr().err.startswith("error[CheckpointNotFound]:")


def test_train_without_manifest(tmp_path, capsys):
    assert run(tmp_path, "train") == 10
    assert "MissingManifest" in capsys.readouterr().err


def test_scenario_evaluate_report(prepared, capsys, tmp_path):
    _, out = prepared
    assert run(out, "train", "--resume") == 0
    assert run(out, "scenario") == 0
    text = capsys.readouterr().out
    for label in ("BTS[BMI]", "BTS[Partial Metadata]", "BTS[No Metadata]"):
        assert label in text
    assert run(out, "evaluate", "--scenario", "NoMetadata") == 0
    assert "BTS[No Metadata]" in capsys.readouterr().out
    assert main(["report", str(out / "runs"), "--json", str(tmp_path / "all.json")]) == 0
    rendered = capsys.readouterr().out
    assert "== Main results ==" in rendered and "== Metadata scenarios ==" in rendered
    assert len(json.loads((tmp_path / "all.json").read_text())) >= 4


def test_ablate_and_report(prepared, capsys):
    _, out = prepared
    assert run(out, "ablate", "--resume", "--seeds", "0", "--epochs", "1") == 0
    table = capsys.readouterr().out
    for row in ("Age-Sex-Loc", "Age-Sex-Dev", "Age-Loc-Dev", "Sex-Loc-Dev", "Audio-CLAP"):
        assert row in table
    assert main(["report", str(out / "runs")]) == 0
    rendered = capsys.readouterr().out
    assert "== Metadata ablation ==" in rendered
    assert "== Score by metadata class ==" in rendered


def test_report_missing(capsys):
    assert main(["report", "/nonexistent/run"]) == 50
    assert capsys.readouterr().err.startswith("error[MissingReport]:")


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("unknown_key: 1\n")
    assert main(["train", "--config", str(bad), "--output-dir", str(tmp_path)]) == 2
    assert "error[ConfigError]" in capsys.readouterr().err
    assert main(["train", "--output-dir", str(tmp_path), "--epochs", "0", "--encoder", "stub"]) == 2


def test_config_precedence(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"model": {"encoder": "stub", "d": 4}, "train": {"epochs": 7}, "output_dir": "from-file"}))
    monkeypatch.setenv("BTS_OUTPUT_ROOT", str(tmp_path / "env"))
    monkeypatch.setenv("BTS_CACHE_ROOT", str(tmp_path / "cache"))
    cfg = load_config(path, {"train.epochs": 3})
    assert (cfg.experiment.model.d, cfg.experiment.train.epochs, cfg.output_dir) == (4, 3, "from-file")
    assert cfg.cache_dir == str(tmp_path / "cache")
    assert load_config(None).output_dir == str(tmp_path / "env")
    # defaults are the published recipe
    default = load_config(None).experiment
    assert (default.train.lr, default.train.epochs, default.train.batch_size) == (5e-5, 50, 8)
    assert default.model.encoder == "clap" and default.subset == "All"


def test_config_round_trip(tmp_path):
    cfg = load_config(None, {"model.encoder": "stub", "subset": "Age-Loc-Dev", "train.seeds": [3, 4]})
    cfg.dump(tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
