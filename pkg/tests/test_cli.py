import json
import re

import pytest
from click.testing import CliRunner

from brbpnn import cli
from brbpnn.data import load_dataset, to_csv
from brbpnn.trainer import TrainingDiverged


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args, **kw):
        return runner.invoke(cli.main, [str(a) for a in args], catch_exceptions=False, **kw)

    return invoke


def test_validate_canonical(run):
    res = run("validate-data")
    assert res.exit_code == 0
    assert "pass: 17 rows" in res.output
    assert "79ddb033a87e31ec" in res.output


def test_validate_tampered_value(run, tmp_path):
    p = tmp_path / "fe.csv"
    p.write_text(to_csv(load_dataset()).replace("160.1255", "160.1256"))
    res = run("validate-data", "--data", p)
    assert res.exit_code == 1
    assert "check 'checksum' failed" in res.output
    assert run("validate-data", "--data", p, "--no-checksum").exit_code == 0


def test_validate_header_typo(run, tmp_path):
    p = tmp_path / "fe.csv"
    p.write_text(to_csv(load_dataset()).replace("u_det_nm", "u_det_mm"))
    res = run("validate-data", "--data", p)
    assert res.exit_code == 1
    assert "missing column(s) u_det_nm" in res.output


def test_validate_reordered_rows(run, tmp_path):
    lines = to_csv(load_dataset()).splitlines()
    lines[2], lines[3] = lines[3], lines[2]
    p = tmp_path / "fe.csv"
    p.write_text("\n".join(lines) + "\n")
    res = run("validate-data", "--data", p)
    assert res.exit_code == 1
    assert "case ids" in res.output


def _train_args(out):
    return ("train", "--model", "II", "--spec", "1-2-2", "--split", "1", "--seed", "7", "--out", out)


def test_train_writes_report_and_checkpoint(run, tmp_path):
    res = run(*_train_args(tmp_path / "a"))
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "a" / "modelII_1-2-2_split1_seed7.report.json").read_text())
    assert 0 <= report["final"]["gamma"] <= 12
    assert report["final"]["K"] == 12 and report["final"]["Q"] == 26
    assert report["stop_reason"] in ("max_epochs", "gradient", "gamma_stall", "lambda_max", "mse_goal")
    assert (tmp_path / "a" / "modelII_1-2-2_split1_seed7.ckpt.json").exists()


def test_train_is_idempotent(run, tmp_path):
    run(*_train_args(tmp_path / "a"))
    run(*_train_args(tmp_path / "b"))
    for name in ("modelII_1-2-2_split1_seed7.report.json", "modelII_1-2-2_split1_seed7.ckpt.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize(
    "args",
    [
        ("--spec", "1-0-3"),
        ("--spec", "1-x-3"),
        ("--spec", "1-5-2"),
        ("--spec", "2-5-3"),
        ("--split", "6"),
        ("--split", "none"),
        ("--model", "III"),
        ("--epochs", "0"),
    ],
)
def test_train_usage_errors(run, args):
    res = run("train", *args)
    assert res.exit_code == 2


def test_train_divergence_exit_1(run, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise TrainingDiverged("objective is not finite", None)

    monkeypatch.setattr(cli, "train", boom)
    res = run(*_train_args(tmp_path / "d"))
    assert res.exit_code == 1
    partial = json.loads((tmp_path / "d" / "modelII_1-2-2_split1_seed7.report.json").read_text())
    assert "not finite" in partial["error"]


def test_out_dir_from_environment(run, tmp_path):
    res = run("train", "--model", "II", "--epochs", "5", env={cli.OUT_ENV: str(tmp_path / "env")})
    assert res.exit_code == 0
    assert (tmp_path / "env" / "modelII_1-2-2_split1_seed0.report.json").exists()


def test_train_all_splits(run, tmp_path):
    res = run("train", "--model", "I", "--split", "all", "--epochs", "5", "--out", tmp_path / "o")
    assert res.exit_code == 0
    assert len(list((tmp_path / "o").glob("*.ckpt.json"))) == 5
    assert len(re.findall(r"^split \d:", res.output, flags=re.M)) == 5


def test_predict_from_checkpoint(run, tmp_path):
    run(*_train_args(tmp_path / "a"))
    ckpt = tmp_path / "a" / "modelII_1-2-2_split1_seed7.ckpt.json"
    res = run("predict", "--checkpoint", ckpt)
    assert res.exit_code == 0
    assert "u_det: max" in res.output and "alpha_det: max" in res.output
    doc = json.loads(run("predict", "--checkpoint", ckpt, "--json").output)
    assert doc["split"] == 1 and [r["case"] for r in doc["rows"][::2]] == [3, 4, 7, 9]
    res = run("predict", "--checkpoint", ckpt, "--theta", "12.5", "--theta", "88")
    assert res.exit_code == 0 and "12.50" in res.output


def test_predict_wrong_model(run, tmp_path):
    run(*_train_args(tmp_path / "a"))
    res = run("predict", "--checkpoint", tmp_path / "a" / "modelII_1-2-2_split1_seed7.ckpt.json", "--model", "I")
    assert res.exit_code == 2


def test_predict_bad_checkpoint(run, tmp_path):
    p = tmp_path / "junk.json"
    p.write_text("{not json")
    assert run("predict", "--checkpoint", p).exit_code == 1


def test_sweep(run, tmp_path):
    res = run("sweep", "--model", "II", "--hidden", "1,2", "--restarts", "1", "--epochs", "20", "--out", tmp_path)
    assert res.exit_code == 0
    doc = json.loads((tmp_path / "sweep_modelII.json").read_text())
    assert set(doc["curve"]) == {"1", "2"} and len(doc["runs"]) == 10
    assert "selected: 1-" in res.output


def test_sweep_bad_hidden(run):
    assert run("sweep", "--hidden", "0-3").exit_code == 2
    assert run("sweep", "--hidden", "a,b").exit_code == 2


SMALL = ("--restarts", "1", "--hidden", "1-2", "--epochs", "20", "--seed", "4")


def test_reproduce_summary_and_digest(run, tmp_path):
    a = run("reproduce", *SMALL, "--out", tmp_path / "a")
    b = run("reproduce", *SMALL, "--out", tmp_path / "b")
    assert a.exit_code == 0 and b.exit_code == 0
    for name in ("fn_max", "ft_max", "u_max", "alpha_det", "u_det"):
        assert re.search(rf"^\s*{name}\s.*(PASS|FAIL)", a.stdout, flags=re.M)
    digest = lambda out: re.search(r"sha256 ([0-9a-f]{64})", out).group(1)
    assert digest(a.stdout) == digest(b.stdout)


def test_reproduce_emit_failure(run, tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    res = run("reproduce", *SMALL, "--out", blocker / "out")
    assert res.exit_code == 1
    assert "stage 'emit' failed" in res.output
