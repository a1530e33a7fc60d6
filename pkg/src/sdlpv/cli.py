"""Command-line front end: ``sdlpv {synthesize,simulate,compare,validate}``.

Settings are resolved as command-line flag, then ``SDLPV_*`` environment
variable, then config file, then built-in default. Exit codes: 0 success,
1 usage or configuration error, 2 synthesis infeasible or unverified,
3 simulation halted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .baseline import TustinController, frozen_closed_loop_abscissa, pade_augment
from .engine import CONVENTIONS, EngineConfig, build_afr_plant
from .lpv import make_grid, validate_plant
from .realization import ContinuousController, SampledDataController, SingularFactorization
from .sim import (make_scenario, metrics, preset_names, reference_windows, simulate,
                  twc_recovery)
from .synthesis import (InfeasibleEverywhere, SynthesisCertificate, SynthesisOptions,
                        check_certificate, plant_signature, synthesize)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_HALT = 0, 1, 2, 3
ENV_PREFIX = "SDLPV_"
DEFAULT_SCENARIOS = ("tracking-no-disturbance",)

logger = logging.getLogger("sdlpv")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    synthesis: SynthesisOptions = field(default_factory=SynthesisOptions)
    scenarios: tuple[str, ...] = DEFAULT_SCENARIOS
    out: Path = Path("sdlpv-out")
    plots: bool = True
    seed: int = 0
    simulation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"engine": self.engine.to_dict(), "synthesis": self.synthesis.to_dict(),
                "scenarios": list(self.scenarios), "out": str(self.out), "plots": self.plots,
                "seed": self.seed, "simulation": dict(self.simulation)}


def _schema() -> dict:
    text = resources.files("sdlpv").joinpath("config.schema.json").read_text()
    return json.loads(text)


def load_config_text(text: str, source: str = "<config>") -> dict:
    """Parse and schema-check a JSON config; errors carry line numbers or paths."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(_schema()).iter_errors(data),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "(root)"
        raise ConfigError(f"{source}: schema violation at {where}: {e.message}")
    return data


def build_run_config(data: dict, *, out=None, seed=None, dense_grid=None,
                     convention=None) -> RunConfig:
    eng = dict(data.get("engine", {}))
    if convention is not None:
        eng["convention"] = convention
    syn = dict(data.get("synthesis", {}))
    if dense_grid is not None:
        syn["verify_counts"] = [int(dense_grid)]
    try:
        engine = EngineConfig.from_dict(eng)
        options = SynthesisOptions.from_dict(syn)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    for nm, counts in (("grid_counts", options.grid_counts), ("verify_counts", options.verify_counts)):
        if any(c < 2 for c in counts):
            raise ConfigError(f"{nm} must be at least 2 per axis, got {list(counts)}")
    scen = tuple(data.get("scenarios", DEFAULT_SCENARIOS))
    unknown = [s for s in scen if s not in preset_names()]
    if unknown:
        raise ConfigError(f"unknown scenario(s) {unknown}; available: {', '.join(preset_names())}")
    return RunConfig(
        engine=engine, synthesis=options, scenarios=scen,
        out=Path(out if out is not None else data.get("out", "sdlpv-out")),
        plots=bool(data.get("plots", True)),
        seed=int(seed if seed is not None else data.get("seed", 0)),
        simulation=dict(data.get("simulation", {})),
    )


def _env(name: str):
    return os.environ.get(ENV_PREFIX + name)


def resolve_config(args) -> RunConfig:
    path = args.config or _env("CONFIG")
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        data = load_config_text(text, str(path))

    def pick(flag, env, conv=str):
        if flag is not None:
            return flag
        v = _env(env)
        if v is None:
            return None
        try:
            return conv(v)
        except ValueError:
            raise ConfigError(f"{ENV_PREFIX}{env}={v!r} is not a valid value") from None

    convention = pick(args.convention, "CONVENTION")
    if convention is not None and convention not in CONVENTIONS:
        raise ConfigError(f"convention must be one of {CONVENTIONS}")
    return build_run_config(
        data,
        out=pick(args.out, "OUT"),
        seed=pick(args.seed, "SEED", int),
        dense_grid=pick(args.dense_grid, "DENSE_GRID", int),
        convention=convention,
    )


# -- output helpers -----------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


def write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def lambda_table_csv(trials) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["lambda2", "lambda3", "lambda4", "lambda5", "gamma", "status", "iterations"])
    for t in trials:
        g = t.get("gamma")
        wr.writerow([repr(t["lambda2"]), repr(t["lambda3"]), repr(t["lambda4"]),
                     repr(t["lambda5"]), "" if g is None else repr(g), t["status"],
                     t.get("iterations", "")])
    return buf.getvalue()


def _err(msg: str):
    print(f"sdlpv: error: {msg}", file=sys.stderr)


# -- verbs -------------------------------------------------------------------


def cmd_synthesize(cfg: RunConfig) -> int:
    plant = build_afr_plant(cfg.engine)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        cert = synthesize(plant, cfg.synthesis,
                          progress=lambda t: logger.info("trial %s", t))
    except InfeasibleEverywhere as exc:
        (out / "lambda_search.csv").write_text(lambda_table_csv(exc.trials))
        write_json(out / "synthesis_report.json",
                   {"feasible": False, "verified": False, "trials": exc.trials,
                    "config": cfg.to_dict()})
        _err(str(exc))
        sys.stdout.write(lambda_table_csv(exc.trials))
        return EXIT_INFEASIBLE
    (out / "certificate.json").write_text(cert.to_json() + "\n")
    (out / "lambda_search.csv").write_text(lambda_table_csv(cert.provenance["trials"]))
    report = check_certificate(cert, plant, make_grid(plant.schedule, cfg.synthesis.verify_counts))
    write_json(out / "margin_report.json", report.to_dict())
    summary = {"feasible": True, "verified": report.passed, "gamma": cert.gamma,
               "lambdas": list(cert.lambdas), "margin": report.to_dict(),
               "config": cfg.to_dict()}
    write_json(out / "synthesis_report.json", summary)
    print(f"gamma = {cert.gamma!r}  lambdas = {list(cert.lambdas)}  "
          f"max dense-grid eigenvalue = {report.max_lmi_eig:.3e}  verified = {report.passed}")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def _load_certificate(path, plant) -> SynthesisCertificate:
    try:
        cert = SynthesisCertificate.from_json(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read certificate {path}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"malformed certificate {path}: {exc}") from None
    sig = cert.provenance.get("plant_signature")
    if sig != plant_signature(plant):
        raise ConfigError(f"certificate {path} was synthesized for a different plant "
                          "(signature mismatch); re-run synthesize with this config")
    return cert


def _controller(kind: str, cert, plant):
    cc = ContinuousController(cert, plant)
    return SampledDataController(cc) if kind == "proposed" else TustinController(cc)


def run_scenario(name: str, cfg: RunConfig, cert, plant, kind: str = "proposed"):
    sim_kw = {k: cfg.simulation[k] for k in ("h", "interpolation", "reference_offset")
              if k in cfg.simulation}
    sc = make_scenario(name, plant, _controller(kind, cert, plant), seed=cfg.seed, **sim_kw)
    trace = simulate(sc)
    return trace, scenario_metrics(trace, cert)


def scenario_metrics(trace, cert) -> dict:
    windows = []
    end = float(trace["t"][-1])
    for a, b in reference_windows(trace):
        if b <= end:
            windows.append(metrics(trace, (a, b)))
    return {
        "scenario": trace.scenario,
        "halted": trace.halted,
        "halt_reason": trace.halt_reason,
        "gamma": cert.gamma,
        "overall": metrics(trace),
        "windows": windows,
        "twc_recovery": twc_recovery(trace),
        "diagnostics": trace.diagnostics[:50],
        "diagnostic_count": len(trace.diagnostics),
    }


def _scenario_list(cfg: RunConfig, scenario):
    names = [scenario] if scenario else list(cfg.scenarios)
    for n in names:
        if n not in preset_names():
            raise ConfigError(f"unknown scenario {n!r}; available: {', '.join(preset_names())}")
    return names


def cmd_simulate(cfg: RunConfig, cert_path, scenario=None) -> int:
    plant = build_afr_plant(cfg.engine)
    names = _scenario_list(cfg, scenario)
    cert = _load_certificate(cert_path, plant)
    workers = int(cfg.simulation.get("workers", 1))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        results = list(ex.map(lambda n: run_scenario(n, cfg, cert, plant), names))
    code = EXIT_OK
    cfg.out.mkdir(parents=True, exist_ok=True)
    for name, (trace, m) in zip(names, results):
        trace.to_csv(cfg.out / f"{name}.csv")
        write_json(cfg.out / f"{name}.metrics.json", m)
        if cfg.plots:
            from .plots import trace_chart

            trace_chart(cfg.out / f"{name}.svg", trace, name)
        status = "HALTED: " + trace.halt_reason if trace.halted else "ok"
        print(f"{name}: {status}; steady-state error {m['overall']['steady_state_error']:.3g}; "
              f"L2 estimate {m['overall']['l2_gain']}")
        if trace.halted:
            code = EXIT_HALT
    return code


DELTA_KEYS = ("overshoot_pct", "settling_time", "steady_state_error", "l2_gain", "max_abs_dm_o2")


def _delta(a: dict, b: dict) -> dict:
    out = {}
    for k in DELTA_KEYS:
        x, y = a.get(k), b.get(k)
        out[k] = None if x is None or y is None else y - x
    return out


def compare_report(name: str, results: dict, cert, plant) -> dict:
    branches = {}
    for kind, (trace, m) in results.items():
        branches[kind] = {"status": "unstable" if trace.halted else "completed", **m}
    p, b = branches["proposed"], branches["baseline"]
    deltas = {"overall": _delta(p["overall"], b["overall"]),
              "windows": [_delta(x, y) for x, y in zip(p["windows"], b["windows"])]}
    aug = pade_augment(plant)
    cc = ContinuousController(cert, plant)
    speeds = make_grid(plant.schedule, 5).points
    pade = [{"speed": float(r[0]), "abscissa": frozen_closed_loop_abscissa(aug, cc, r)}
            for r in speeds]
    return {"scenario": name, "branches": branches,
            "delta_baseline_minus_proposed": deltas, "pade_frozen_closed_loop": pade}


def report_table(rep: dict) -> str:
    lines = [f"scenario: {rep['scenario']}", ""]
    head = f"{'metric':<22}{'proposed':>16}{'baseline':>16}{'delta':>16}"
    p, b = rep["branches"]["proposed"], rep["branches"]["baseline"]
    d = rep["delta_baseline_minus_proposed"]["overall"]

    def fmt(v):
        return "n/a" if v is None else f"{v:.6g}"

    lines += [f"status: proposed={p['status']} baseline={b['status']}", "", "overall", head]
    for k in DELTA_KEYS:
        lines.append(f"{k:<22}{fmt(p['overall'].get(k)):>16}{fmt(b['overall'].get(k)):>16}"
                     f"{fmt(d.get(k)):>16}")
    for i, (wp, wb) in enumerate(zip(p["windows"], b["windows"])):
        lines += ["", f"window {i}: t = {wp['window'][0]:.3f} .. {wp['window'][1]:.3f}", head]
        dd = rep["delta_baseline_minus_proposed"]["windows"][i]
        for k in DELTA_KEYS:
            lines.append(f"{k:<22}{fmt(wp.get(k)):>16}{fmt(wb.get(k)):>16}{fmt(dd.get(k)):>16}")
    return "\n".join(lines) + "\n"


def cmd_compare(cfg: RunConfig, cert_path, scenario=None) -> int:
    plant = build_afr_plant(cfg.engine)
    name = _scenario_list(cfg, scenario)[0]
    cert = _load_certificate(cert_path, plant)
    results = {kind: run_scenario(name, cfg, cert, plant, kind) for kind in ("proposed", "baseline")}
    rep = compare_report(name, results, cert, plant)
    out = cfg.out / f"compare-{name}"
    out.mkdir(parents=True, exist_ok=True)
    for kind, (trace, _) in results.items():
        trace.to_csv(out / f"{kind}.csv")
    write_json(out / "report.json", rep)
    (out / "report.txt").write_text(report_table(rep))
    from .plots import overlay_chart

    overlay_chart(out / "overlay.svg", {k: v[0] for k, v in results.items()}, name)
    sys.stdout.write(report_table(rep))
    return EXIT_HALT if results["proposed"][0].halted else EXIT_OK


def cmd_validate(cfg: RunConfig, cert_path=None) -> int:
    plant = build_afr_plant(cfg.engine)
    findings = validate_plant(plant)
    for f in findings:
        print(f"plant {f.kind}: {f.message}")
    if findings:
        return EXIT_CONFIG
    print("config and plant: ok")
    if cert_path is None:
        return EXIT_OK
    cert = _load_certificate(cert_path, plant)
    report = check_certificate(cert, plant, make_grid(plant.schedule, cfg.synthesis.verify_counts))
    try:
        ContinuousController(cert, plant)
    except SingularFactorization as exc:
        _err(str(exc))
        return EXIT_INFEASIBLE
    print(f"certificate: gamma = {cert.gamma!r}, max dense-grid eigenvalue = "
          f"{report.max_lmi_eig:.3e}, verified = {report.passed}")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (env SDLPV_CONFIG)")
    common.add_argument("--out", help="output directory (env SDLPV_OUT)")
    common.add_argument("--seed", type=int, help="run seed recorded in outputs (env SDLPV_SEED)")
    common.add_argument("--dense-grid", type=int,
                        help="points per axis of the verification grid (env SDLPV_DENSE_GRID)")
    common.add_argument("--convention", choices=CONVENTIONS,
                        help="sampling-law convention (env SDLPV_CONVENTION)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sdlpv", description=(
        "Sampled-data gain-scheduled AFR controller: synthesis, simulation and comparison."))
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("synthesize", parents=[common], help="solve the gridded LMI and verify it")
    for verb, hlp in (("simulate", "simulate preset scenarios with the synthesized controller"),
                      ("compare", "run the proposed and the Tustin baseline controllers")):
        sp = sub.add_parser(verb, parents=[common], help=hlp)
        sp.add_argument("--scenario", help=f"preset name: {', '.join(preset_names())}")
        sp.add_argument("--certificate", help="certificate JSON (default OUT/certificate.json)")
    sp = sub.add_parser("validate", parents=[common], help="check config, plant and certificate")
    sp.add_argument("--certificate", help="optional certificate JSON to verify")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cert_path = getattr(args, "certificate", None) or _env("CERTIFICATE")
        if args.verb == "synthesize":
            return cmd_synthesize(cfg)
        if args.verb == "validate":
            return cmd_validate(cfg, cert_path)
        cert_path = cert_path or cfg.out / "certificate.json"
        if args.verb == "simulate":
            return cmd_simulate(cfg, cert_path, args.scenario)
        return cmd_compare(cfg, cert_path, args.scenario)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
