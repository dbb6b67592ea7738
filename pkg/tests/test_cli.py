import csv
import json
import subprocess
import sys

import pytest

from nonlocal_manifold import cli
from nonlocal_manifold.cli import (EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ConfigError, StudyConfig,
                                   slope_assertions)
from nonlocal_manifold.solve import SingularSystemError


def _config(tmp_path, **fields):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(fields))
    return str(p)


def test_bad_json_reports_line(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text('{\n  "case_id": "unit_disk",\n  "deltas": [0.1,\n}\n')
    assert cli.main(["validate", "--config", str(p)]) == EXIT_CONFIG
    assert "line 4" in capsys.readouterr().err


@pytest.mark.parametrize("fields,needle", [
    ({"case_id": "unit_disk", "deltas": [0.5]}, "max_delta"),
    ({"case_id": "unit_disk", "h_ratio": 2}, "h_ratio"),
    ({"deltas": [0.05, 0.1]}, "decreasing"),
    ({"case_id": "torus"}, "case_id"),
    ({"colour": "red"}, "unknown field"),
    ({"mode": "sideways"}, "mode"),
    ({"probes": ["spike"]}, "probes"),
    ({"seed": 1.5}, "seed"),
])
def test_config_errors_exit_2(tmp_path, capsys, fields, needle):
    assert cli.main(["residual", "--config", _config(tmp_path, **fields)]) == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["validate", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_defaults_and_overrides(tmp_path):
    cfg = StudyConfig().validate()
    assert cfg.deltas == [0.2, 0.1, 0.05, 0.025] and cfg.h_ratio == 8.0
    args = cli._parser().parse_args(["residual", "--config", _config(tmp_path, case_id="interval"),
                                     "--deltas", "0.1,0.05", "--mode", "both"])
    cfg = cli.build_config(args)
    assert cfg.case_id == "interval" and cfg.deltas == [0.1, 0.05] and cfg.modes == ("corrected", "legacy")
    with pytest.raises(ConfigError):
        cli.build_config(cli._parser().parse_args(["residual", "--deltas", "0.1,x"]))


@pytest.mark.parametrize("cid", ["interval", "unit_disk"])
def test_validate_passes(tmp_path, cid):
    assert cli.main(["validate", "--case", cid, "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["failed"] == []
    assert rep["config"]["case_id"] == cid


def test_single_delta_keeps_norms(tmp_path):
    code = cli.main(["residual", "--case", "interval", "--deltas", "0.05", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "residual_study.csv")))
    assert len(rows) == 1 and float(rows[0]["norm_layer"]) > 0
    slopes = json.loads((tmp_path / "slopes.json").read_text())
    assert "3 points" in slopes["slopes"]["corrected"]["norm_layer"]["note"]
    assert slopes["config"]["deltas"] == [0.05]


def test_both_modes_and_assertions(tmp_path):
    code = cli.main(["residual", "--case", "interval", "--mode", "both", "--deltas", "0.1,0.05,0.025",
                     "--h-ratio", "4", "--assert-slopes", "--out", str(tmp_path)])
    rows = list(csv.DictReader(open(tmp_path / "residual_study.csv")))
    assert [r["mode"] for r in rows] == ["corrected"] * 3 + ["legacy"] * 3
    summary = json.loads((tmp_path / "slopes.json").read_text())
    assert set(summary["slopes"]) == {"corrected", "legacy"}
    assert summary["assertions"]["passed"] == (code == EXIT_OK)


def test_slope_assertions():
    good = {k: {"slope": v + 0.2} for k, v in cli.SLOPE_FLOORS.items()}
    assert slope_assertions({"corrected": good}) == []
    bad = dict(good, norm_bd={"slope": 1.0})
    assert any("norm_bd" in m for m in slope_assertions({"corrected": bad}))
    legacy = {"norm_layer": {"slope": 1.0}}
    assert slope_assertions({"corrected": good, "legacy": legacy}) == []
    legacy = {"norm_layer": {"slope": 1.3}}
    assert len(slope_assertions({"corrected": good, "legacy": legacy})) == 2
    assert slope_assertions({"corrected": dict(good, norm_layer={"note": "too few"})})


def test_reproducible_outputs(tmp_path):
    outs = []
    for name, extra in (("a", []), ("b", []), ("c", ["--parallel"])):
        d = tmp_path / name
        argv = ["residual", "--case", "half_circle_arc", "--mode", "both",
                "--deltas", "0.1,0.05,0.025", "--out", str(d)] + extra
        assert cli.main(argv) == EXIT_OK
        outs.append((d / "residual_study.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert (tmp_path / "c" / "residual_0.05.csv").exists()


def test_solve_writes_tables(tmp_path):
    code = cli.main(["solve", "--case", "interval", "--deltas", "0.1,0.05", "--out", str(tmp_path)])
    assert code == EXIT_OK
    for d in ("0.1", "0.05"):
        assert (tmp_path / f"solution_{d}.csv").exists()
    rows = list(csv.DictReader(open(tmp_path / "solve_errors.csv")))
    errs = [float(r["error_u"]) for r in rows]
    assert errs[1] < errs[0]
    summary = json.loads((tmp_path / "solve.json").read_text())
    assert summary["config"]["case_id"] == "interval"
    assert "note" in summary["rates"]["corrected"]


def test_solve_failure_exits_3(tmp_path, monkeypatch, capsys):
    def singular(blocks, method="auto"):
        raise SingularSystemError("numerically singular system", 1e-17)

    monkeypatch.setattr(cli, "solve_coupled", singular)
    code = cli.main(["solve", "--case", "interval", "--deltas", "0.1", "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert "pivot ratio" in capsys.readouterr().err


def test_cases_and_kernels(capsys):
    assert cli.main(["cases"]) == EXIT_OK
    listed = json.loads(capsys.readouterr().out)
    assert {c["case_id"] for c in listed} == {"interval", "half_circle_arc", "unit_disk", "hemisphere"}
    assert cli.main(["kernels"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "nonlocal_manifold.cli", "cases", "--case", "interval"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)[0]["case_id"] == "interval"
