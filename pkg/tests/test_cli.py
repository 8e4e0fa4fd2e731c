from __future__ import annotations

import json

import pytest

from anosovlab.cli import (MATCHING_VERDICT, OBSTRUCTION_VERDICT, TRIVIAL_VERDICT, COMMANDS, main,
                           rigidity_verdict)
from conftest import CONFIGS

CAT_CFG = CONFIGS / "cat.json"


@pytest.fixture(scope="module")
def cat_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    codes = {}
    for cmd in sorted(COMMANDS):
        codes[cmd] = main([cmd, "--config", str(CAT_CFG), "--out", str(base / cmd)])
    return base, codes


def test_every_subcommand_succeeds(cat_runs):
    base, codes = cat_runs
    assert codes == {c: 0 for c in COMMANDS}
    for cmd in COMMANDS:
        files = list((base / cmd).glob("*.json"))
        assert files, cmd
        for p in files:
            doc = json.loads(p.read_text())
            assert doc["seed"] == 0 and doc["command"] and "config" in doc


def test_csv_artifacts(cat_runs):
    base, _ = cat_runs
    for cmd, name in [("periodic", "periodic.csv"), ("livshits", "livshits.csv"),
                      ("match-test", "match_test.csv"), ("srb-mme", "srb_mme.csv"),
                      ("conjugacy", "conjugacy_sweep.csv"), ("conjugacy", "conjugacy_images.csv")]:
        lines = (base / cmd / name).read_text().splitlines()
        assert len(lines) >= 2 and "," in lines[0]


def test_conjugacy_holder_report(cat_runs):
    base, _ = cat_runs
    doc = json.loads((base / "conjugacy" / "conjugacy.json").read_text())
    assert abs(doc["holder"]["stable"] - 1) < 0.05 and abs(doc["holder"]["unstable"] - 1) < 0.05
    assert doc["defect"] < 1e-9


def test_classify_cat_is_generic(cat_runs):
    base, _ = cat_runs
    doc = json.loads((base / "classify" / "classify.json").read_text())
    assert doc["genericity"]["generic"] is True


def test_defaults_echoed(cat_runs):
    base, _ = cat_runs
    cfg = json.loads((base / "rates" / "rates.json").read_text())["config"]
    for key in ("tol", "match_tol", "kernel_tol", "step", "epsilons", "workers", "grid_size"):
        assert key in cfg


@pytest.mark.parametrize("cmd", ["periodic", "pcf", "match-test", "matching-kernel"])
def test_byte_identical_rerun(cat_runs, tmp_path, cmd):
    base, _ = cat_runs
    assert main([cmd, "--config", str(CAT_CFG), "--out", str(tmp_path)]) == 0
    for p in (base / cmd).iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes()


def test_seed_flag_recorded(tmp_path):
    assert main(["rates", "--config", str(CAT_CFG), "--out", str(tmp_path), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "rates.json").read_text())["seed"] == 9


def test_schema_error_reports_line_and_field(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "map": {"matrix": [[2, 1], [1, 1]]},\n  "k_max": "four"\n}\n')
    code = main(["periodic", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "field k_max" in err
    doc = json.loads((tmp_path / "o" / "error.json").read_text())
    assert doc["exit_code"] == 2 and doc["error"] == "ConfigError"


def test_malformed_json(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "map": {"matrix": [[2, 1], [1, 1]]},,\n}\n')
    assert main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_unknown_field_and_dimension(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"map": {"matrix": [[2, 1], [1, 1]],
                                       "modes": [{"frequency": [1, 0, 0], "coefficient": [1, 0]}]}}))
    assert main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"map": {"matrix": [[2, 1], [1, 1]]}, "colour": 1}))
    assert main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["classify", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = tmp_path / "deg.json"
    cfg.write_text(json.dumps({"map": {"matrix": [[1, 1], [0, 1]]}}))
    assert main(["rates", "--config", str(cfg), "--out", str(tmp_path / "o")]) in (2, 3)
    assert (tmp_path / "o" / "error.json").exists()


def test_identity_rigidity_report(tmp_path):
    assert main(["rigidity-report", "--config", str(CONFIGS / "t3_identity.json"),
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "rigidity_report.json").read_text())
    assert doc["verdict"] == TRIVIAL_VERDICT and doc["kernel_dim"] == 0


def test_obstruction_rigidity_report(tmp_path):
    assert main(["rigidity-report", "--config", str(CONFIGS / "t3_obstruction.json"),
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "rigidity_report.json").read_text())
    assert doc["verdict"] == OBSTRUCTION_VERDICT
    assert doc["witness"]["period"] == 1 and doc["witness"]["kind"] == "unstable"
    assert doc["srb_equals_mme"]["map"] == "obstructed"


def test_verdict_is_pure():
    match = {"full_match": True, "stable_match": True, "unstable_match": True,
             "max_gap_s": 0.0, "max_gap_u": 0.0, "witness": None}
    srb = {"verdict": "coboundary-consistent"}
    kern = {"kernel_dim": 0}
    a = rigidity_verdict(match, srb, srb, kern, True)
    assert a == rigidity_verdict(dict(match), dict(srb), dict(srb), dict(kern), True)
    assert a["verdict"] == TRIVIAL_VERDICT
    assert rigidity_verdict(match, srb, srb, kern, False)["verdict"] == MATCHING_VERDICT
    bad = {**match, "unstable_match": False, "full_match": False, "max_gap_u": 0.1,
           "witness": {"period": 1}}
    out = rigidity_verdict(bad, srb, srb, kern, False)
    assert out["verdict"] == OBSTRUCTION_VERDICT and out["witness"] == {"period": 1}
