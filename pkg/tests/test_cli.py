import csv
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from wordkrill.cli import EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_UNRELIABLE, main
from wordkrill.dfm import load_counts
from wordkrill.resources import load_schema, toy_corpus_dir


def check_schema(path, name):
    jsonschema.validate(json.loads(path.read_text(encoding="utf-8")), load_schema(name))


def read_column(path, col):
    with open(path, newline="", encoding="utf-8") as fh:
        return np.array([float(r[col]) for r in csv.DictReader(fh)])


@pytest.fixture(scope="module")
def toy_dfm(tmp_path_factory):
    out = tmp_path_factory.mktemp("ingest")
    code = main([
        "ingest", "--input", str(toy_corpus_dir()), "--lowercase", "--strip-punct",
        "--min-doc-count", "2", "--out", str(out / "dfm.csv"),
    ])
    assert code == EXIT_OK
    return out / "dfm.csv"


@pytest.fixture(scope="module")
def k1_sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--docs", "20", "--features", "200", "--k", "1", "--seed", "3", "--out", str(out)]) == 0
    return out / "dfm.csv"


def test_ingest_writes_matrix_report_and_manifest(toy_dfm):
    out = toy_dfm.parent
    matrix = load_counts(toy_dfm)
    assert matrix.n_docs == 20
    report = json.loads((out / "report.json").read_text())
    assert report["n_docs"] == 20 and report["n_features"] == matrix.n_features
    check_schema(out / "report.json", "ingest_report")
    check_schema(out / "run_manifest.json", "manifest")


def test_ingest_missing_stopwords(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    code = main([
        "ingest", "--input", str(toy_corpus_dir()), "--stopwords", str(missing), "--out", str(tmp_path / "d.csv"),
    ])
    assert code == EXIT_INPUT
    assert str(missing) in capsys.readouterr().err


def test_ingest_triplet_is_idempotent(toy_dfm, tmp_path):
    again = tmp_path / "again.csv"
    assert main(["ingest", "--input", str(toy_dfm), "--format", "triplet", "--out", str(again)]) == 0
    assert again.read_bytes() == toy_dfm.read_bytes()


def test_ingest_degenerate_corpus(tmp_path, capsys):
    code = main([
        "ingest", "--input", str(toy_corpus_dir()), "--min-doc-count", "100", "--out", str(tmp_path / "d.csv"),
    ])
    assert code == EXIT_INPUT
    assert "trim" in capsys.readouterr().err


def test_fit_writes_three_files(toy_dfm, tmp_path):
    out = tmp_path / "run1"
    assert main(["fit", "--dfm", str(toy_dfm), "--k", "2", "--sig-level", "0.05", "--seed", "7", "--out", str(out)]) == 0
    for name in ("fit.json", "positions.csv", "features.csv", "run_manifest.json"):
        assert (out / name).is_file()
    check_schema(out / "fit.json", "fit")
    header = (out / "positions.csv").read_text().splitlines()[0]
    assert header == "doc_id,theta_1,theta_2"
    assert (out / "features.csv").read_text().startswith("feature_id,psi,beta_1,beta_2\n")


def test_fit_methods_agree(k1_sim, tmp_path):
    for method in ("joint", "conditional"):
        assert main(["fit", "--dfm", str(k1_sim), "--method", method, "--out", str(tmp_path / method)]) == 0
    a = read_column(tmp_path / "joint" / "positions.csv", "theta_1")
    b = read_column(tmp_path / "conditional" / "positions.csv", "theta_1")
    assert abs(np.corrcoef(a, b)[0, 1]) >= 0.999


def test_fit_epsilon_override_recorded(k1_sim, tmp_path):
    assert main(["fit", "--dfm", str(k1_sim), "--epsilon", "0.1", "--out", str(tmp_path)]) == 0
    saved = json.loads((tmp_path / "fit.json").read_text())
    assert saved["epsilon"]["eps_final"] == 0.1 and saved["epsilon"]["overridden"]


def test_fit_not_converged_still_writes(k1_sim, tmp_path):
    assert main(["fit", "--dfm", str(k1_sim), "--max-iters", "1", "--out", str(tmp_path)]) == EXIT_NOT_CONVERGED
    assert json.loads((tmp_path / "fit.json").read_text())["converged"] is False


def test_fit_input_errors(k1_sim, tmp_path):
    assert main(["fit", "--dfm", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["fit", "--dfm", str(k1_sim), "--k", "2", "--method", "conditional", "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["fit", "--dfm", str(k1_sim), "--k", "25", "--out", str(tmp_path)]) == EXIT_INPUT


@pytest.fixture(scope="module")
def k1_fit_dir(k1_sim, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--dfm", str(k1_sim), "--method", "conditional", "--out", str(out)]) == 0
    return out


def edited_fit(fit_dir, tmp_path, block, index, value):
    saved = json.loads((fit_dir / "fit.json").read_text())
    arr = np.array(saved["params"][block])
    arr[index] = value
    saved["params"][block] = arr.tolist()
    path = tmp_path / "edited.json"
    path.write_text(json.dumps(saved))
    return path


def test_uncertainty_fisher(k1_sim, k1_fit_dir, tmp_path):
    out = tmp_path / "u"
    args = ["uncertainty", "--fit", str(k1_fit_dir / "fit.json"), "--dfm", str(k1_sim), "--out", str(out)]
    assert main(args) == 0
    check_schema(out / "uncertainty.json", "uncertainty")
    lines = (out / "uncertainty.csv").read_text().splitlines()
    assert lines[0] == "doc_id,dim,theta,se,lower,upper,method" and len(lines) == 21


def test_uncertainty_singular_document(k1_sim, k1_fit_dir, tmp_path, capsys):
    path = edited_fit(k1_fit_dir, tmp_path, "beta", slice(None), 0.0)
    out = tmp_path / "u"
    assert main(["uncertainty", "--fit", str(path), "--dfm", str(k1_sim), "--out", str(out)]) == 0
    assert "singular" in capsys.readouterr().err
    with open(out / "uncertainty.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["se"] == "" and r["lower"] == "" and r["upper"] == "" for r in rows)


def test_bootstrap_same_seed_identical(k1_sim, k1_fit_dir, tmp_path):
    base = ["uncertainty", "--fit", str(k1_fit_dir / "fit.json"), "--dfm", str(k1_sim),
            "--method", "bootstrap", "--reps", "10", "--seed", "3"]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--out", str(tmp_path / "b")]) == 0
    for name in ("uncertainty.csv", "uncertainty.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    check_schema(tmp_path / "a" / "uncertainty.json", "uncertainty")


def test_bootstrap_unreliable_exit(k1_sim, k1_fit_dir, tmp_path):
    path = edited_fit(k1_fit_dir, tmp_path, "alpha", 3, -60.0)
    out = tmp_path / "u"
    code = main(["uncertainty", "--fit", str(path), "--dfm", str(k1_sim), "--method", "bootstrap",
                 "--reps", "5", "--out", str(out)])
    assert code == EXIT_UNRELIABLE
    assert json.loads((out / "uncertainty.json").read_text())["unreliable"] is True


def test_uncertainty_label_mismatch(toy_dfm, k1_fit_dir, tmp_path):
    args = ["uncertainty", "--fit", str(k1_fit_dir / "fit.json"), "--dfm", str(toy_dfm), "--out", str(tmp_path)]
    assert main(args) == EXIT_INPUT


def test_two_dimensional_ellipses(toy_dfm, tmp_path):
    assert main(["fit", "--dfm", str(toy_dfm), "--k", "2", "--out", str(tmp_path / "f")]) == 0
    out = tmp_path / "u"
    assert main(["uncertainty", "--fit", str(tmp_path / "f" / "fit.json"), "--dfm", str(toy_dfm), "--out", str(out)]) == 0
    lines = (out / "ellipses.csv").read_text().splitlines()
    assert lines[0] == "doc_id,center_1,center_2,major,minor,angle" and len(lines) == 21


def test_simulate_with_recovery(tmp_path):
    code = main(["simulate", "--docs", "50", "--features", "500", "--k", "2", "--seed", "1", "--fit", "--out", str(tmp_path)])
    assert code == 0
    check_schema(tmp_path / "truth.json", "truth")
    check_schema(tmp_path / "recovery_report.json", "recovery")
    report = json.loads((tmp_path / "recovery_report.json").read_text())
    assert len(report["abs_correlation"]) == 2 and min(report["abs_correlation"]) >= 0.9


def test_simulate_without_signal(tmp_path):
    code = main(["simulate", "--docs", "20", "--features", "200", "--k", "1", "--beta-sd", "0",
                 "--fit", "--method", "conditional", "--seed", "2", "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert json.loads((tmp_path / "recovery_report.json").read_text())["abs_correlation"][0] < 0.6


def test_simulate_overflow(tmp_path, capsys):
    assert main(["simulate", "--psi-mean", "40", "--out", str(tmp_path)]) == EXIT_INPUT
    assert "smaller" in capsys.readouterr().err


def test_simulate_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--docs", "10", "--features", "30", "--seed", "5", "--out", str(tmp_path / d)]) == 0
    for name in ("dfm.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "wordkrill", "simulate", "--docs", "5", "--features", "8", "--k", "1", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "dfm.csv").is_file()
