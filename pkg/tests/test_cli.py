import json

import pytest

from octxai.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "cohort.csv"
    assert main(["generate", "--out", str(path), "--seed", "3"]) == EXIT_OK
    return path


def test_generate_and_validate(cohort, capsys):
    assert main(["validate", "--dataset", str(cohort)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "632 eye rows" in out and "'HC': 111" in out


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["run"]) == EXIT_USAGE
    assert main(["run", "--seed", "1", "--models", "SVM"]) == EXIT_USAGE
    assert main(["validate"]) == EXIT_USAGE


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,dataset\n")
    assert main(["validate", "--dataset", str(bad)]) == EXIT_DATA
    assert main(["validate", "--dataset", str(tmp_path / "missing.csv")]) == EXIT_DATA
    (tmp_path / "zones.txt").write_text("1 2\n")
    assert main(["validate", "--zones", str(tmp_path / "zones.txt")]) == EXIT_USAGE


def test_run_explain_report(cohort, tmp_path, capsys):
    study = tmp_path / "study"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model_overrides": {"RF": {"n_estimators": 10}}, "strategies": ["Rand"]}))
    argv = ["run", "--seed", "5", "--out", str(study), "--dataset", str(cohort), "--layers", "GCL",
            "--feature-sets", "Zones", "--strategies", "LR", "--models", "RF", "--k", "5", "--no-plots",
            "--config", str(cfg)]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    # the config file wins over the --strategies flag
    assert "GCL_Zones_Rand_RF" in out
    assert main(["explain", "--study", str(study), "--cell", "GCL_Zones_Rand_RF", "--fold", "1",
                 "--out", str(tmp_path / "expl"), "--no-plots"]) == EXIT_OK
    assert (tmp_path / "expl" / "confusion.csv").exists()
    assert (tmp_path / "expl" / "manifest.json").exists()
    assert main(["explain", "--study", str(study), "--cell", "nope", "--fold", "0",
                 "--out", str(tmp_path / "x")]) == EXIT_DATA
    assert main(["report", "--study", str(study)]) == EXIT_OK
    assert (study / "reports" / "table3.csv").exists()


def test_bad_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["run", "--seed", "1", "--out", str(tmp_path / "s"), "--config", str(cfg)]) == EXIT_USAGE
