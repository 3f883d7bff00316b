import json

import pytest

from implicit_auth.cli import main
from implicit_auth.config import RESULTS_ENV, Config
from implicit_auth.sensors import ValidationError


def test_config_defaults_and_overrides(tmp_path, monkeypatch):
    monkeypatch.delenv(RESULTS_ENV, raising=False)
    assert Config.load().window_s == 6.0
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"rho": 0.5, "T_windows": "20"}))
    cfg = Config.load(path, {"rho": "2"})
    assert (cfg.rho, cfg.T_windows) == (2.0, 20)


def test_config_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"rhoo": 1}))
    with pytest.raises(ValidationError, match="rhoo"):
        Config.load(path)
    with pytest.raises(ValidationError, match="window_s"):
        Config.load(None, {"window_s": "-1"})
    with pytest.raises(ValidationError, match="rho"):
        Config.load(None, {"rho": "abc"})


def test_results_env(monkeypatch):
    monkeypatch.setenv(RESULTS_ENV, "/tmp/elsewhere")
    assert Config.load().results_dir == "/tmp/elsewhere"
    assert Config.load(None, {"results_dir": "mine"}).results_dir == "mine"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    flags = ["--data-dir", str(root / "data"), "--model-dir", str(root / "models"),
             "--results-dir", str(root / "results")]
    assert main(flags + ["generate", "--users", "4", "--windows", "40"]) == 0
    assert main(flags + ["extract", "--out", str(root / "feats.csv")]) == 0
    return root, flags


def test_generate_and_extract(workspace):
    root, _ = workspace
    assert sorted(p.name for p in (root / "data").iterdir()) == ["truth.csv", "u00.csv", "u01.csv", "u02.csv",
                                                                 "u03.csv"]
    header = (root / "feats.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 30 and header[-2:] == ["user_id", "context"]


def test_select_report(workspace):
    root, flags = workspace
    assert main(flags + ["select"]) == 0
    report = json.loads((root / "results" / "selection.json").read_text())
    assert set(report) == {"phone_acc", "phone_gyr", "watch_acc", "watch_gyr"}
    assert {"fisher", "ks_pvalue_quartiles", "correlation", "kept"} <= set(report["phone_acc"])


def test_train_run_and_lockout(workspace, capsys):
    root, flags = workspace
    feats = str(root / "feats.csv")
    assert main(flags + ["train-context", "--features", feats, "--exclude-user", "u00", "--trees", "20"]) == 0
    assert main(flags + ["--data-size", "80", "train-auth", "--features", feats, "--owner", "u00",
                         "--rho", "1.0", "--context", "moving"]) == 0
    assert (root / "models" / "auth_moving_phone_watch.json").exists()
    assert main(flags + ["--data-size", "80", "train-auth", "--features", feats, "--owner", "u00"]) == 0

    log = root / "u01.jsonl"
    assert main(flags + ["run", "--data", str(root / "data" / "u01.csv"), "--out", str(log)]) == 0
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert any(e["kind"] == "lockout" for r in rows for e in r["events"])

    capsys.readouterr()
    assert main(flags + ["detect-context", "--data", str(root / "data" / "u00.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert json.loads(lines[0])["context"] == "stationary"


def test_evaluate_gate(workspace):
    _, flags = workspace
    base = flags + ["--data-size", "100", "evaluate", "--users", "4", "--windows", "60", "--iterations", "1"]
    assert main(base) == 0
    assert main(base + ["--preset", "identical", "--min-accuracy", "0.9"]) == 1


def test_sweep_writes_curves(workspace):
    root, flags = workspace
    assert main(flags + ["sweep", "--kind", "data", "--users", "3", "--windows", "40", "--sizes", "40,80"]) == 0
    assert json.loads((root / "results" / "sweep_data.json").read_text())[0]["data_size"] == 40


def test_usage_and_validation_exit_codes(workspace):
    _, flags = workspace
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2
    assert main(["--rho", "-1", "generate"]) == 1
    assert main(flags + ["--model-dir", "/nonexistent", "run", "--data", "x.csv"]) == 1
