import json
import random
import subprocess

import jsonschema
import pytest

from voxdet.cli import main
from voxdet.evaluate import report_schema
from voxdet.metrics import CaseResult, subgroup_filter

ORACLE_FLAGS = ["--detect-prob", "1", "--noise-sigma", "0", "--fp-rate", "0"]


def files_of(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def oracle_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("oracle")
    assert main(["phantom", "--pdac", "3", "--normal", "3", "--models", "2", "--seed", "11", "--out", str(out)] + ORACLE_FLAGS) == 0
    return out


@pytest.fixture(scope="module")
def oracle_report(oracle_cohort, tmp_path_factory):
    out = tmp_path_factory.mktemp("oracle_eval")
    assert main(["eval", "--manifest", str(oracle_cohort / "manifest.json"), "--out", str(out), "--subgroup-max-mm", "20"]) == 0
    return out


def test_phantom_counts_and_rerun(tmp_path):
    args = ["phantom", "--pdac", "3", "--normal", "2", "--models", "1", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(m["cases"]) == 5 and m["seed"] == 7
    assert files_of(tmp_path / "a") == files_of(tmp_path / "b")


def test_phantom_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("VOXDET_SEED", "7")
    assert main(["phantom", "--pdac", "1", "--normal", "0", "--out", str(tmp_path / "env")]) == 0
    assert main(["phantom", "--pdac", "1", "--normal", "0", "--seed", "7", "--out", str(tmp_path / "flag")]) == 0
    assert files_of(tmp_path / "env") == files_of(tmp_path / "flag")
    monkeypatch.setenv("VOXDET_SEED", "abc")
    assert main(["phantom", "--pdac", "1", "--normal", "0", "--out", str(tmp_path / "bad")]) == 2


def test_usage_errors(tmp_path, capsys):
    assert main(["phantom", "--pdac", "3", "--normal", "2"]) == 2
    assert main([]) == 2
    assert main(["phantom", "--pdac", "-1", "--normal", "2", "--out", str(tmp_path)]) == 2
    assert main(["phantom", "--pdac", "1", "--normal", "0", "--detect-prob", "2", "--out", str(tmp_path)]) == 2
    (tmp_path / "empty.json").write_text(json.dumps({"cases": []}))
    assert main(["eval", "--manifest", str(tmp_path / "empty.json"), "--out", str(tmp_path / "r")]) == 2
    assert main(["eval", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")]) == 2
    capsys.readouterr()


def test_entry_point_exit_codes():
    assert subprocess.run(["voxdet", "--help"], capture_output=True).returncode == 0
    assert subprocess.run(["voxdet", "eval"], capture_output=True).returncode == 2


def test_eval_oracle(oracle_report):
    report = json.loads((oracle_report / "report.json").read_text())
    assert report["roc"]["auc"] == 1.0
    assert report["metrics"]["auc"] == [1.0, 1.0]
    assert report["froc"]["pauc"] == pytest.approx(4.999, abs=1e-9)
    assert report["n_cases"] == 6 and report["n_models"] == 2
    assert (oracle_report / "roc.csv").read_text().splitlines()[0] == "threshold,x,y"
    assert (oracle_report / "froc.csv").exists()


def test_eval_report_schema(oracle_report):
    report = json.loads((oracle_report / "report.json").read_text())
    jsonschema.validate(report, report_schema())


def test_eval_subgroup_count(oracle_report):
    report = json.loads((oracle_report / "report.json").read_text())
    cases = [CaseResult.from_dict(c) for c in report["per_case"]]
    sub = report["subgroup"]
    assert sub["case_count"] == len(subgroup_filter(cases, 20.0))
    assert sub["n_normal"] == 3
    assert len(sub["per_case"]) == sub["case_count"]


def test_eval_shuffled_manifest_identical(oracle_cohort, oracle_report, tmp_path):
    m = json.loads((oracle_cohort / "manifest.json").read_text())
    random.Random(3).shuffle(m["cases"])
    shuffled = oracle_cohort / "shuffled.json"
    shuffled.write_text(json.dumps(m))
    assert main(["eval", "--manifest", str(shuffled), "--out", str(tmp_path), "--subgroup-max-mm", "20"]) == 0
    assert (tmp_path / "report.json").read_bytes() == (oracle_report / "report.json").read_bytes()


def test_eval_config_file_and_flags(oracle_cohort, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"margin_mm": 10.0, "dice_min": 0.2}))
    assert main(["eval", "--manifest", str(oracle_cohort / "manifest.json"), "--config", str(cfg), "--margin-mm", "15", "--out", str(tmp_path / "r")]) == 0
    conf = json.loads((tmp_path / "r" / "report.json").read_text())["config"]
    assert conf["margin_mm"] == 15.0 and conf["dice_min"] == 0.2
    cfg.write_text(json.dumps({"margin": 10.0}))
    assert main(["eval", "--manifest", str(oracle_cohort / "manifest.json"), "--config", str(cfg), "--out", str(tmp_path / "r2")]) == 2


def test_eval_bad_case_exits_1(oracle_cohort, tmp_path):
    m = json.loads((oracle_cohort / "manifest.json").read_text())
    for c in m["cases"]:
        c["likelihoods"] = c["likelihoods"][:1]
    m["cases"][0]["likelihoods"] = [m["cases"][0]["coarse_mask"]]
    bad = oracle_cohort / "bad.json"
    bad.write_text(json.dumps(m))
    assert main(["eval", "--manifest", str(bad), "--out", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["errors"]) == 1 and report["n_cases"] == 5


def test_detect(oracle_cohort, tmp_path):
    case = oracle_cohort / "cases" / "pdac_0000"
    out = tmp_path / "det.json"
    rc = main(["detect", "--image", str(case / "image.nrrd"), "--coarse-mask", str(case / "coarse_mask.nrrd"), "--likelihood", str(case / "likelihood_m00.nrrd"), "--out", str(out)])
    assert rc == 0
    res = json.loads(out.read_text())
    assert res["patient_score"] >= 0.7 and len(res["candidates"]) == 1


def test_compare_self_and_determinism(oracle_report, capsys):
    r = str(oracle_report / "report.json")
    assert main(["compare", "--a", r, "--b", r, "--iterations", "1000", "--seed", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["p_raw"] == 1.0


@pytest.fixture(scope="module")
def ten_model_reports(tmp_path_factory):
    base = tmp_path_factory.mktemp("ten")
    reports = {}
    for name, flags in [("oracle", ORACLE_FLAGS), ("broken", ["--detect-prob", "0.5", "--noise-sigma", "0", "--fp-rate", "2"])]:
        assert main(["phantom", "--pdac", "4", "--normal", "4", "--models", "10", "--seed", "3", "--out", str(base / name)] + flags) == 0
        assert main(["eval", "--manifest", str(base / name / "manifest.json"), "--out", str(base / f"{name}_r"), "--jobs", "2"]) == 0
        reports[name] = str(base / f"{name}_r" / "report.json")
    return reports


def test_compare_oracle_vs_broken(ten_model_reports, capsys):
    args = ["compare", "--a", ten_model_reports["oracle"], "--b", ten_model_reports["broken"], "--seed", "1", "--m", "3"]
    assert main(args) == 0
    first = capsys.readouterr().out
    res = json.loads(first)
    assert res["p_adjusted"] < 0.025 and res["significant"]
    assert res["iterations"] == 100_000
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert main(args[:-2] + ["--metric", "pauc"]) == 0
    capsys.readouterr()


def test_compare_missing_subgroup(oracle_cohort, tmp_path, capsys):
    assert main(["eval", "--manifest", str(oracle_cohort / "manifest.json"), "--out", str(tmp_path)]) == 0
    r = str(tmp_path / "report.json")
    assert main(["compare", "--a", r, "--b", r, "--subgroup"]) == 1
    capsys.readouterr()
