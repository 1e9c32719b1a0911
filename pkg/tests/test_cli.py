import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from vtlkws.cli import run
from vtlkws.stats import read_scores

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TOY = str(CONFIGS / "toy.json")


@pytest.fixture(scope="module")
def toy_run(fixture_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "vtl"
    code = run(["train", "--config", TOY, "--root", str(fixture_corpus), "--method", "vtl-independent",
                "--epochs", "2", "--seed-init", "42", "--out", str(out), "--log-level", "WARNING"])
    assert code == 0
    return out


def test_help_exits_zero(capsys):
    assert run(["--help"]) == 0
    assert "train" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "vtlkws", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "sweep-alpha" in out.stdout


def test_invalid_method_exit_two(capsys):
    assert run(["train", "--method", "foo"]) == 2
    err = capsys.readouterr().err
    assert "vtl-independent" in err and "concat" in err


def test_unknown_subcommand_exit_two():
    assert run(["frobnicate"]) == 2


def test_bad_config_exit_three(tmp_path, capsys):
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"schema_version": 1, "train": {"epochz": 3}}))
    assert run(["ttest", "--config", str(bad), "--runs-a", "x", "--runs-b", "y"]) == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "config"
    bad.write_text(json.dumps({"schema_version": 2}))
    assert run(["ttest", "--config", str(bad), "--runs-a", "x", "--runs-b", "y"]) == 3


def test_inconsistent_train_config_exit_three(fixture_corpus, tmp_path):
    code = run(["train", "--root", str(fixture_corpus), "--method", "baseline", "--epochs", "3",
                "--warmup-epochs", "5", "--out", str(tmp_path)])
    assert code == 3


def test_runtime_failure_exit_one(tmp_path, capsys):
    code = run(["train", "--root", str(tmp_path), "--method", "baseline", "--out", str(tmp_path / "r")])
    assert code == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "runtime"


def test_train_smoke_two_epochs(toy_run):
    with open(toy_run / "log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert (toy_run / "final.ckpt").is_file()
    assert json.loads((toy_run / "config.json").read_text())["train"]["epochs"] == 2


def test_default_config_short_epochs_scales_warmup(fixture_corpus, tmp_path):
    out = tmp_path / "r"
    code = run(["train", "--root", str(fixture_corpus), "--method", "baseline", "--epochs", "2",
                "--seed-init", "42", "--out", str(out), "--log-level", "ERROR"])
    assert code == 0
    assert json.loads((out / "config.json").read_text())["train"]["warmup_epochs"] == 0


def test_eval_writes_schema_valid_scores(fixture_corpus, toy_run, tmp_path):
    out = tmp_path / "eval"
    assert run(["eval", "--config", TOY, "--root", str(fixture_corpus), "--method", "vtl-independent",
                "--model", str(toy_run / "final.ckpt"), "--out", str(out), "--jobs", "2"]) == 0
    rows = read_scores(out / "scores.csv")
    assert len(rows) == 10
    assert len(rows[0]["posteriors"]) == 2
    assert all(abs(sum(r["posteriors"]) - 1.0) < 1e-6 for r in rows)
    with open(out / "sweep.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 21
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["n_eval"] == 10 and metrics["class_names"] == ["down", "up"]


def test_eval_provenance_mismatch(fixture_corpus, toy_run, tmp_path):
    args = ["eval", "--config", TOY, "--root", str(fixture_corpus), "--method", "concat",
            "--model", str(toy_run / "final.ckpt"), "--out", str(tmp_path)]
    assert run(args) == 1


def test_sweep_alpha_subcommand(fixture_corpus, toy_run, tmp_path, capsys):
    assert run(["sweep-alpha", "--config", TOY, "--root", str(fixture_corpus),
                "--model", str(toy_run / "final.ckpt"), "--out", str(tmp_path)]) == 0
    rows = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert [r[0] for r in rows] == sorted(r[0] for r in rows) and len(rows) == 21


def _tree(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_extract_idempotent(fixture_corpus, tmp_path, capsys):
    cache = tmp_path / "cache"
    args = ["extract", "--root", str(fixture_corpus), "--cache-dir", str(cache), "--split", "eval"]
    assert run(args) == 0
    first = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    snap = _tree(cache)
    assert first["written"] == 10 * 21 and len(snap) == 210
    assert run(args) == 0
    second = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert second["written"] == 0
    assert _tree(cache) == snap


def test_cache_env_var(fixture_corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("VTLKWS_CACHE", str(tmp_path / "envcache"))
    assert run(["extract", "--root", str(fixture_corpus), "--split", "eval", "--log-level", "ERROR"]) == 0
    assert (tmp_path / "envcache" / "a1.00").is_dir()


def test_train_from_cache_dir(fixture_corpus, tmp_path):
    cache = tmp_path / "cache"
    assert run(["extract", "--root", str(fixture_corpus), "--cache-dir", str(cache)]) == 0
    assert run(["train", "--config", TOY, "--root", str(fixture_corpus), "--method", "baseline",
                "--epochs", "2", "--cache-dir", str(cache), "--out", str(tmp_path / "r")]) == 0


def test_identical_config_identical_artifacts(fixture_corpus, tmp_path):
    for name in ("a", "b"):
        assert run(["train", "--config", TOY, "--root", str(fixture_corpus), "--method", "baseline",
                    "--epochs", "2", "--out", str(tmp_path / name), "--log-level", "ERROR"]) == 0
    for f in ("log.csv", "schedule.json", "final.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_ttest_json(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("accuracy\n1\n2\n3\n4\n5\n")
    (tmp_path / "b.csv").write_text("accuracy\n2\n3\n4\n5\n6\n")
    assert run(["ttest", "--runs-a", str(tmp_path / "a.csv"), "--runs-b", str(tmp_path / "b.csv")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["t_statistic"] == pytest.approx(-1.0)
    assert abs(res["p_value"] - 0.3466) < 1e-3


def test_fetch_manifest(fixture_corpus, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert run(["fetch-manifest", "--root", str(fixture_corpus), "--out", str(out)]) == 0
    counts = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert counts == {"train": 30, "eval": 10, "valid": 0}
    m = json.loads(out.read_text())
    assert len(m["eval"]) == 10
    assert run(["extract", "--root", str(fixture_corpus), "--manifest", str(out), "--split", "eval",
                "--cache-dir", str(tmp_path / "c"), "--log-level", "ERROR"]) == 0


def test_fetch_manifest_fraction(fixture_corpus, tmp_path, capsys):
    out = tmp_path / "m.json"
    assert run(["fetch-manifest", "--root", str(fixture_corpus), "--eval-fraction", "0.25",
                "--out", str(out)]) == 0
    counts = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert counts["train"] + counts["eval"] == 40 and counts["eval"] > 0


def test_report_subcommand(fixture_corpus, toy_run, tmp_path):
    ev = tmp_path / "eval"
    assert run(["eval", "--config", TOY, "--root", str(fixture_corpus), "--method", "vtl-independent",
                "--model", str(toy_run / "final.ckpt"), "--out", str(ev)]) == 0
    (tmp_path / "a.csv").write_text("96.8\n96.9\n96.7\n")
    (tmp_path / "b.csv").write_text("97.0\n97.1\n96.95\n")
    out = tmp_path / "report"
    assert run(["report", "--eval", f"vtl-independent={ev}",
                "--ttest", f"vtl_vs_base={tmp_path / 'b.csv'},{tmp_path / 'a.csv'}", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["reports"][0]["class_names"] == ["down", "up"]
    assert len(doc["sweeps"]["vtl-independent"]) == 21
    assert "vtl_vs_base" in doc["significance"]
    assert run(["report", "--eval", "no-equals-sign", "--out", str(out)]) == 1


def test_train_bc_block_net_arch(fixture_corpus, tmp_path):
    out = tmp_path / "bc"
    assert run(["train", "--config", TOY, "--root", str(fixture_corpus), "--method", "baseline", "--epochs", "2",
                "--arch", "bc_block_net", "--out", str(out), "--log-level", "ERROR"]) == 0
    model = json.loads((out / "config.json").read_text())["model"]
    assert model["architecture"] == "bc_block_net" and model["channels"] == [16, 32]
