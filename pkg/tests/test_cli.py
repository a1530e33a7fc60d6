import json

import numpy as np
import pytest

from sdlpv import cli
from sdlpv.cli import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, build_parser, compare_report,
                       load_config_text, main, resolve_config)
from sdlpv.engine import build_afr_plant
from sdlpv.sim import SimulationTrace, preset_names
from sdlpv.synthesis import InfeasibleEverywhere, SynthesisCertificate

REDUCED = {
    "synthesis": {"grid_counts": [3], "lambda2": [1.0], "lambda3": [0.1], "lambda4": [1.0],
                  "verify_counts": [9]},
}


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return p


@pytest.fixture(scope="module")
def reduced_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _write(tmp, REDUCED)
    out = tmp / "out"
    code = main(["synthesize", "--config", str(cfg), "--out", str(out)])
    return code, cfg, out


def test_synthesize_reduced_writes_artifacts(reduced_run):
    code, _, out = reduced_run
    assert code == EXIT_OK
    for name in ("certificate.json", "lambda_search.csv", "margin_report.json",
                 "synthesis_report.json"):
        assert (out / name).exists(), name
    margin = json.loads((out / "margin_report.json").read_text())
    assert margin["passed"] and margin["max_lmi_eig"] <= 0
    cert = SynthesisCertificate.from_json((out / "certificate.json").read_text())
    assert np.isfinite(cert.gamma) and cert.gamma > 0
    table = (out / "lambda_search.csv").read_text().splitlines()
    assert table[0].startswith("lambda2,lambda3,lambda4") and len(table) == 2


def test_synthesize_reproducible(reduced_run, tmp_path):
    _, cfg, out = reduced_run
    again = tmp_path / "again"
    assert main(["synthesize", "--config", str(cfg), "--out", str(again)]) == EXIT_OK
    for name in ("certificate.json", "lambda_search.csv", "margin_report.json"):
        assert (again / name).read_bytes() == (out / name).read_bytes(), name


def test_validate_with_certificate(reduced_run, capsys):
    _, cfg, out = reduced_run
    code = main(["validate", "--config", str(cfg), "--certificate", str(out / "certificate.json")])
    assert code == EXIT_OK
    assert "verified = True" in capsys.readouterr().out


def test_certificate_plant_mismatch(reduced_run, capsys):
    _, cfg, out = reduced_run
    code = main(["simulate", "--config", str(cfg), "--convention", "physical-120",
                 "--certificate", str(out / "certificate.json"), "--out", str(out / "sim")])
    assert code == EXIT_CONFIG
    assert "different plant" in capsys.readouterr().err


def test_compare_identical_branches_zero_delta(reduced_run):
    _, _, out = reduced_run
    plant = build_afr_plant()
    cert = SynthesisCertificate.from_json((out / "certificate.json").read_text())
    t = np.linspace(0, 40, 401)
    cols = {"t": t, "sample": np.ones_like(t, bool), "r": np.where(t < 20, 1.0, 1.1),
            "d": np.zeros_like(t), "y_track": np.where(t < 20, 1.0, 1.1 - 0.1 * np.exp(20 - t)),
            "z1": np.sin(t), "dm_o2": np.zeros_like(t)}
    tr = SimulationTrace(cols, scenario={"reference_offset": 1.0, "reference": {
        "kind": "step-sequence", "breakpoints": [[0.0, 1.0], [20.0, 1.1]]},
        "disturbance": {"kind": "constant", "breakpoints": [[0.0, 0.0]]}})
    m = cli.scenario_metrics(tr, cert)
    rep = compare_report("x", {"proposed": (tr, m), "baseline": (tr, m)}, cert, plant)
    for k, v in rep["delta_baseline_minus_proposed"]["overall"].items():
        assert v in (0.0, None), k
    assert all(v == 0.0 for w in rep["delta_baseline_minus_proposed"]["windows"]
               for v in w.values() if v is not None)
    assert len(rep["pade_frozen_closed_loop"]) == 5
    text = cli.report_table(rep)
    assert "settling_time" in text and "l2_gain" in text

    halted = SimulationTrace(dict(cols), halted=True, halt_reason="boom", scenario=tr.scenario)
    rep = compare_report("x", {"proposed": (tr, m), "baseline": (halted, m)}, cert, plant)
    assert rep["branches"]["baseline"]["status"] == "unstable"
    assert rep["branches"]["proposed"]["status"] == "completed"


def test_malformed_json_reports_line(tmp_path, capsys):
    cfg = _write(tmp_path, '{\n  "engine": {\n    "cyl": 6,,\n  }\n}\n')
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"{cfg}:3:" in err and "invalid JSON" in err


def test_degenerate_speed_range(tmp_path, capsys):
    cfg = _write(tmp_path, {"engine": {"speed_min": 800, "speed_max": 800}})
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "speed range" in capsys.readouterr().err


def test_grid_count_below_two(tmp_path, capsys):
    cfg = _write(tmp_path, {"synthesis": {"grid_counts": [1]}})
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "at least 2" in capsys.readouterr().err


def test_schema_violation(tmp_path, capsys):
    cfg = _write(tmp_path, {"engine": {"cylinders": 6}})
    assert main(["validate", "--config", str(cfg)]) == EXIT_CONFIG
    assert "schema violation" in capsys.readouterr().err


def test_unknown_scenario_lists_presets(tmp_path, capsys):
    code = main(["simulate", "--scenario", "warp-speed", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "warp-speed" in err
    for name in preset_names():
        assert name in err


def test_unknown_verb_is_usage_error(capsys):
    assert main(["fly"]) == EXIT_CONFIG


def test_missing_certificate(tmp_path, capsys):
    code = main(["simulate", "--scenario", "oxygen-800rpm", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "cannot read certificate" in capsys.readouterr().err


def test_env_override_and_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("SDLPV_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("SDLPV_SEED", "17")
    monkeypatch.setenv("SDLPV_DENSE_GRID", "12")
    monkeypatch.setenv("SDLPV_CONVENTION", "physical-120")
    args = build_parser().parse_args(["synthesize"])
    cfg = resolve_config(args)
    assert cfg.out == tmp_path / "env" and cfg.seed == 17
    assert cfg.synthesis.verify_counts == (12,) and cfg.engine.convention == "physical-120"
    args = build_parser().parse_args(["synthesize", "--out", str(tmp_path / "flag"), "--seed", "3"])
    cfg = resolve_config(args)
    assert cfg.out == tmp_path / "flag" and cfg.seed == 3


def test_env_bad_value(monkeypatch, capsys):
    monkeypatch.setenv("SDLPV_SEED", "many")
    assert main(["validate"]) == EXIT_CONFIG
    assert "SDLPV_SEED" in capsys.readouterr().err


def test_config_file_from_env(tmp_path, monkeypatch):
    cfg = _write(tmp_path, {"seed": 5, "scenarios": ["oxygen-800rpm"]})
    monkeypatch.setenv("SDLPV_CONFIG", str(cfg))
    rc = resolve_config(build_parser().parse_args(["validate"]))
    assert rc.seed == 5 and rc.scenarios == ("oxygen-800rpm",)


def test_load_config_accepts_full_document():
    text = json.dumps({
        "engine": {"cyl": 6, "convention": "literal-4pi"},
        "synthesis": {"lambda2": [0.1, 1.0], "backend": "cvxopt"},
        "simulation": {"interpolation": "cubic", "workers": 2},
        "scenarios": ["energy-pulse"], "plots": False, "out": "x", "seed": 1,
    })
    assert load_config_text(text)["plots"] is False


def test_infeasible_exit_code_prints_table(tmp_path, monkeypatch, capsys):
    trials = [{"lambda2": 1.0, "lambda3": 1.0, "lambda4": 1.0, "lambda5": 0.0,
               "status": "infeasible", "gamma": None, "iterations": 7}]

    def boom(plant, options, progress=None):
        raise InfeasibleEverywhere(trials)

    monkeypatch.setattr(cli, "synthesize", boom)
    assert main(["synthesize", "--out", str(tmp_path)]) == EXIT_INFEASIBLE
    out = capsys.readouterr().out
    assert "lambda2,lambda3" in out and "infeasible" in out
    assert (tmp_path / "lambda_search.csv").exists()
    rep = json.loads((tmp_path / "synthesis_report.json").read_text())
    assert rep["feasible"] is False and rep["trials"][0]["gamma"] is None


def test_validate_plain_ok(capsys):
    assert main(["validate"]) == EXIT_OK
    assert "ok" in capsys.readouterr().out
