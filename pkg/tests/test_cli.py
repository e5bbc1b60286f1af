import json

import pytest

from hmdbench import modelio
from hmdbench.cli import main, resolve_seed, UsageError

TINY = {"suite": {"archetypes": ["BurstyUserDriven"], "traces_per_cell": 4, "trace_len_ms": 8000},
        "markov": {"kmeans_n_init": 1, "codebook_max_vectors": 2000},
        "bow": {"m": 30, "nu": 0.1, "gamma": 10.0},
        "baseline": {"max_train_vectors": 300, "nu": 0.1, "gamma": 1.0}}


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "suite")]) == 0
    return root, cfg


def test_synth_is_byte_deterministic(suite, tmp_path):
    root, cfg = suite
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    a = (root / "suite" / "manifest.json").read_bytes()
    assert a == (tmp_path / "again" / "manifest.json").read_bytes()
    doc = json.loads(a)
    for e in doc["traces"][:6]:
        assert (root / "suite" / e["path"]).read_bytes() == (tmp_path / "again" / e["path"]).read_bytes()


def test_seed_changes_suite(suite, tmp_path):
    root, cfg = suite
    assert main(["synth", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "s5")]) == 0
    assert (tmp_path / "s5" / "BurstyUserDriven" / "benign_000.csv").read_bytes() != \
        (root / "suite" / "BurstyUserDriven" / "benign_000.csv").read_bytes()


@pytest.mark.parametrize("det", ["markov", "bow", "baseline"])
def test_train_then_detect(suite, det, tmp_path, capsys):
    root, cfg = suite
    model = tmp_path / f"{det}.model"
    assert main(["train", det, "--config", str(cfg), "--manifest", str(root / "suite"),
                 "--archetype", "BurstyUserDriven", "--out", str(model)]) == 0
    assert modelio.load_model(model).kind == det
    benign = root / "suite" / "BurstyUserDriven" / "benign_003.csv"
    out = tmp_path / "rep.csv"
    code = main(["detect", str(model), str(benign), "--out", str(out)])
    flagged = int(capsys.readouterr().out.splitlines()[-1].split()[0])
    assert code == (2 if flagged else 0)
    assert out.read_text().splitlines()[0].startswith("window_start_ms,")
    if det != "baseline":
        heavy = root / "suite" / "BurstyUserDriven" / "FileSteal-s8-Z.csv"
        assert main(["detect", str(model), str(heavy)]) == 2


def test_detect_on_corrupt_model(tmp_path, suite, capsys):
    root, _ = suite
    bad = tmp_path / "bad.model"
    bad.write_bytes(b"garbage")
    trace = root / "suite" / "BurstyUserDriven" / "benign_000.csv"
    assert main(["detect", str(bad), str(trace)]) == 1
    assert "not a model file" in capsys.readouterr().err


def test_detect_missing_files(tmp_path, capsys):
    assert main(["detect", str(tmp_path / "x.model"), str(tmp_path / "t.csv")]) == 1
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize("argv, msg", [
    (["synth", "--out", "x", "--bogus"], "unrecognized arguments"),
    (["train", "svm", "--manifest", "m", "--archetype", "a", "--out", "o"], "invalid choice"),
    (["frobnicate"], "invalid choice"),
    (["synth", "--out", "x", "--set", "suite.nosuch=1"], "unknown field"),
    (["synth", "--out", "x", "--set", "novalue"], "section.field=value"),
])
def test_usage_errors(argv, msg, capsys):
    assert main(argv) == 1
    assert msg in capsys.readouterr().err


def test_unknown_config_section(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"suite": {}, "nonsense": 1}))
    assert main(["train", "markov", "--config", str(cfg), "--manifest", str(tmp_path),
                 "--archetype", "A", "--out", str(tmp_path / "m")]) == 1
    assert "nonsense" in capsys.readouterr().err


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("HMDBENCH_SEED", "7")
    assert resolve_seed(3, 5) == 3
    assert resolve_seed(None, 5) == 5
    assert resolve_seed(None, None) == 7
    monkeypatch.setenv("HMDBENCH_SEED", "x")
    with pytest.raises(UsageError):
        resolve_seed(None, None)
    monkeypatch.delenv("HMDBENCH_SEED")
    assert resolve_seed(None, None) == 0


def test_report_requires_evaluation(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    assert "run 'hmdbench evaluate' first" in capsys.readouterr().err
