import csv
import json

import pytest

from equiprune.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def moons_csv(tmp_path):
    path = tmp_path / "moons.csv"
    assert run_cli("synth", "--kind", "moons", "--n", 80, "--noise", 0.15,
                   "--seed", 1, "--out", path) == 0
    return path


@pytest.fixture
def pipeline(tmp_path, moons_csv):
    """split -> train; returns the paths dict."""
    prefix = tmp_path / "part"
    assert run_cli("split", "--data", moons_csv, "--label", "label",
                   "--ratios", "0.64,0.16,0.20", "--seed", 0,
                   "--out-prefix", prefix,
                   "--manifest", tmp_path / "manifest.json") == 0
    model = tmp_path / "model.json"
    assert run_cli("train", "--data", f"{prefix}0.csv", "--label", "label",
                   "--rounds", 4, "--depth", 2, "--out", model) == 0
    return {
        "fit": f"{prefix}0.csv",
        "cal": f"{prefix}1.csv",
        "test": f"{prefix}2.csv",
        "model": model,
        "tmp": tmp_path,
    }


def test_synth_writes_csv(moons_csv):
    with open(moons_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x0", "x1", "label"]
    assert len(rows) == 81


def test_split_manifest(pipeline):
    manifest = json.loads((pipeline["tmp"] / "manifest.json").read_text())
    assert manifest["ratios"] == [0.64, 0.16, 0.20]
    sizes = [len(p) for p in manifest["partitions"]]
    assert sum(sizes) == 80


def test_full_pipeline_prune_evaluate_verify(pipeline):
    tmp = pipeline["tmp"]
    score = tmp / "score.json"
    assert run_cli("fit-score", "--model", pipeline["model"], "--data",
                   pipeline["fit"], "--label", "label", "--score", "chowliu",
                   "--out", score) == 0

    calib = tmp / "calibration.json"
    assert run_cli("calibrate", "--model", pipeline["model"],
                   "--score-model", score, "--data", pipeline["cal"],
                   "--label", "label", "--alpha", 0.4, "--out", calib) == 0
    calib_payload = json.loads(calib.read_text())
    assert calib_payload["alpha"] == 0.4
    assert "config" in calib_payload

    result = tmp / "result.json"
    assert run_cli("prune", "--model", pipeline["model"], "--fit",
                   pipeline["fit"], "--cal", pipeline["cal"], "--label",
                   "label", "--alpha", 0.4, "--score", "chowliu",
                   "--objective", "l0", "--out", result) == 0
    payload = json.loads(result.read_text())
    assert payload["certified"] is True
    assert payload["config"]["alpha"] == 0.4
    assert len(payload["weights"]) == 4

    report = tmp / "report.json"
    assert run_cli("evaluate", "--model", pipeline["model"], "--result",
                   result, "--test", pipeline["test"], "--label", "label",
                   "--score-model", score, "--out", report) == 0
    rep = json.loads(report.read_text())
    assert 0.0 <= rep["fidelity"] <= 1.0
    if rep["conditional_fidelity"] is not None and payload["certified"]:
        assert rep["conditional_fidelity"] == 1.0

    verdict = tmp / "verdict.json"
    assert run_cli("verify", "--model", pipeline["model"], "--result",
                   result, "--score-model", score, "--out", verdict) == 0
    v = json.loads(verdict.read_text())
    if payload["tau"] is not None:
        assert v["equivalent"] is True
        assert "state_bound" in v
        assert v["state_bound"]["holds"] is True


def test_prune_full_space_scope(pipeline):
    tmp = pipeline["tmp"]
    result = tmp / "fs.json"
    assert run_cli("prune", "--model", pipeline["model"], "--fit",
                   pipeline["fit"], "--label", "label", "--full-space",
                   "--out", result) == 0
    payload = json.loads(result.read_text())
    assert payload["guarantee_scope"] == "full_space"
    assert payload["tau"] is None

    verdict = tmp / "fs_verdict.json"
    assert run_cli("verify", "--model", pipeline["model"], "--result",
                   result, "--out", verdict) == 0
    assert json.loads(verdict.read_text())["equivalent"] is True


def test_prune_requires_mode(pipeline, capsys):
    rc = run_cli("prune", "--model", pipeline["model"], "--fit",
                 pipeline["fit"], "--label", "label",
                 "--out", pipeline["tmp"] / "x.json")
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_select_alpha_flow(pipeline):
    tmp = pipeline["tmp"]
    results = []
    for alpha in (0.2, 0.6):
        out = tmp / f"res_{alpha}.json"
        assert run_cli("prune", "--model", pipeline["model"], "--fit",
                       pipeline["fit"], "--cal", pipeline["cal"], "--label",
                       "label", "--alpha", alpha, "--out", out) == 0
        results.append(out)
    selection = tmp / "selection.json"
    assert run_cli("select-alpha", "--model", pipeline["model"], "--sel",
                   pipeline["test"], "--label", "label", "--results",
                   *results, "--target", 0.5, "--selector", "empirical",
                   "--out", selection) == 0
    sel = json.loads(selection.read_text())
    assert sel["chosen"] in (0.2, 0.6, None)


def test_sweep_row_count(pipeline):
    tmp = pipeline["tmp"]
    out = tmp / "sweep.csv"
    assert run_cli("sweep", "--data", tmp / "moons.csv", "--label", "label",
                   "--seeds", "0,1", "--alphas", "0.3,0.7", "--rounds", 3,
                   "--depth", 2, "--out", out) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    # per seed: 1 full-space row + one row per alpha
    assert len(rows) == 2 * (1 + 2)
    methods = {r["method"] for r in rows}
    assert methods == {"full_space", "in_distribution"}
    for row in rows:
        # counts identity: fidelity >= coverage * conditional fidelity
        if row["coverage"] and row["conditional_fidelity"]:
            lhs = float(row["fidelity"])
            rhs = float(row["coverage"]) * float(row["conditional_fidelity"])
            assert lhs >= rhs - 1e-12


def test_four_way_split_selection_protocol(tmp_path, moons_csv):
    # fit/calibration/selection/test split feeding the post-hoc selector
    prefix = tmp_path / "q"
    assert run_cli("split", "--data", moons_csv, "--label", "label",
                   "--ratios", "0.48,0.16,0.16,0.20", "--seed", 3,
                   "--out-prefix", prefix) == 0
    model = tmp_path / "m.json"
    assert run_cli("train", "--data", f"{prefix}0.csv", "--label", "label",
                   "--rounds", 4, "--depth", 2, "--out", model) == 0
    results = []
    for alpha in (0.3, 0.6, 0.9):
        out = tmp_path / f"r{alpha}.json"
        assert run_cli("prune", "--model", model, "--fit", f"{prefix}0.csv",
                       "--cal", f"{prefix}1.csv", "--label", "label",
                       "--alpha", alpha, "--out", out) == 0
        results.append(out)
    out = tmp_path / "sel.json"
    assert run_cli("select-alpha", "--model", model, "--sel",
                   f"{prefix}2.csv", "--label", "label", "--results",
                   *results, "--target", 0.9, "--selector",
                   "confidence_bound", "--delta", 0.05, "--out", out) == 0
    sel = json.loads(out.read_text())
    assert sel["delta"] == 0.05
    assert len(sel["mismatches"]) == 3
    assert sel["chosen"] in (0.3, 0.6, 0.9, None)


def test_sweep_threads_match_serial(pipeline):
    tmp = pipeline["tmp"]
    serial = tmp / "serial.csv"
    threaded = tmp / "threaded.csv"
    common = ["--data", tmp / "moons.csv", "--label", "label", "--seeds",
              "0,1", "--alphas", "0.5", "--rounds", 3, "--depth", 2]
    assert run_cli("sweep", *common, "--out", serial) == 0
    assert run_cli("sweep", *common, "--threads", 2, "--out", threaded) == 0
    with open(serial) as fh:
        rows_a = list(csv.DictReader(fh))
    with open(threaded) as fh:
        rows_b = list(csv.DictReader(fh))
    for a, b in zip(rows_a, rows_b):
        a.pop("time_s"), b.pop("time_s")
        assert a == b


def test_convert_round_trip(tmp_path):
    dump = tmp_path / "dump.txt"
    dump.write_text(
        "booster[0]:\n0:[f0<0.5] yes=1,no=2\n1:leaf=0.4\n2:leaf=-0.4\n")
    out = tmp_path / "model.json"
    assert run_cli("convert", "--dump", dump, "--classes", 2, "--features", 2,
                   "--out", out) == 0
    payload = json.loads(out.read_text())
    assert payload["n_features"] == 2
    assert payload["trees"][0]["threshold"] == 0.5


def test_synth_treedist(tmp_path):
    out = tmp_path / "tree.csv"
    assert run_cli("synth", "--kind", "treedist", "--n", 50, "--p", 3,
                   "--states", 2, "--seed", 4, "--out", out) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x0", "x1", "x2"]
    assert len(rows) == 51


def test_verify_tau_override(pipeline):
    tmp = pipeline["tmp"]
    score = tmp / "s.json"
    assert run_cli("fit-score", "--model", pipeline["model"], "--data",
                   pipeline["fit"], "--label", "label", "--out", score) == 0
    result = tmp / "fs2.json"
    assert run_cli("prune", "--model", pipeline["model"], "--fit",
                   pipeline["fit"], "--label", "label", "--full-space",
                   "--out", result) == 0
    verdict = tmp / "v2.json"
    # restrict the full-space certificate check to an explicit region
    assert run_cli("verify", "--model", pipeline["model"], "--result",
                   result, "--score-model", score, "--tau", 3.0,
                   "--out", verdict) == 0
    v = json.loads(verdict.read_text())
    assert v["equivalent"] is True
    assert v["state_bound"]["holds"] is True


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        main(["prune"])  # missing required flags
    assert err.value.code == 2
