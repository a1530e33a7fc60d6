"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import filecmp
import json
import math
import time

import numpy as np
import pytest

from sdlpv.cli import RunConfig, main, run_scenario
from sdlpv.engine import build_afr_plant
from sdlpv.lmi import PointVariables, assemble_blocks
from sdlpv.lpv import make_grid
from sdlpv.realization import (ControllerMatrices, discretize_step, interp_coeffs, matrix_phi,
                               roundtrip_error)
from sdlpv.sim import HistoryBuffer, dde_step, metrics, reference_windows, twc_recovery
from sdlpv.synthesis import (AFFINE_CAPABLE, CONSTANT_ONLY, SynthesisOptions, VariableLayout,
                             check_certificate)

from conftest import scalar_delay_plant


def _numeric_vars(layout, x, rho):
    phys = {k: layout.physical(k, x) for k in AFFINE_CAPABLE}
    return PointVariables(
        P=phys["P"](rho), dP=[phys["P"].derivative(i) for i in range(len(rho))],
        X=phys["X"](rho), Y=phys["Y"](rho),
        **{k: layout.physical(k, x).base for k in CONSTANT_ONLY},
        A_hat=phys["A_hat"](rho), A_tau_hat=phys["A_tau_hat"](rho),
        A_T_hat=phys["A_T_hat"](rho), B_hat=phys["B_hat"](rho), C_hat=phys["C_hat"](rho),
        D_K=phys["D_K"](rho), gamma=float(x[layout.gamma_index]),
    )


def test_criterion_01_delay_range(acceptance_log):
    t0 = time.perf_counter()
    plant = build_afr_plant()
    omegas = np.linspace(800.0, 4000.0, 3201)
    taus = np.array([plant.delay([w]) for w in omegas])
    lo, hi = float(taus.min()), float(taus.max())
    elapsed = time.perf_counter() - t0
    ok = (abs(lo - 0.045) <= 1e-12 and abs(hi - 0.225) <= 1e-12
          and 0.020 <= lo and hi <= 0.500 and elapsed < 1.0)
    acceptance_log(1, ok, f"tau in [{lo!r}, {hi!r}] s, {elapsed:.2f} s")
    assert ok


def test_criterion_02_lmi_structure(acceptance_log):
    t0 = time.perf_counter()
    plant = build_afr_plant()
    opts = SynthesisOptions()
    layout = VariableLayout(plant, opts.dependence)
    rng = np.random.default_rng(2024)
    rho = np.array([2100.0])
    frozen = plant.at(rho)
    nu = plant.schedule.rate_bound
    dtau, dT = plant.delay.gradient(rho), plant.sampling.gradient(rho)
    lams = (1.0, 0.1, 10.0, 0.5)

    def assemble(x, s=1.0):
        v = _numeric_vars(layout, x, rho)
        return assemble_blocks(frozen, v, lams, plant.delay.upper, plant.sampling.upper,
                               [s], nu, dtau, dT)

    x = rng.normal(size=layout.m)
    M = assemble(x)
    shape_ok = M.shape == (45, 45)
    sym = max(float(np.max(np.abs(assemble(x, s) - assemble(x, s).T))) for s in (1.0, -1.0))
    zero = np.zeros(layout.m)
    second = float(np.max(np.abs(assemble(2 * x) - 2 * M + assemble(zero))))
    # per-scalar second difference along every decision coordinate
    per_scalar = 0.0
    for j in range(layout.m):
        e = np.zeros(layout.m)
        e[j] = 1.0
        d = assemble(x + e) - 2 * M + assemble(x - e)
        per_scalar = max(per_scalar, float(np.max(np.abs(d))))
    elapsed = time.perf_counter() - t0
    ok = shape_ok and sym == 0.0 and second <= 1e-10 and per_scalar <= 1e-10 and elapsed < 5.0
    acceptance_log(2, ok, f"shape {M.shape}, max|M-M^T|={sym:.1e}, second diff {second:.1e} "
                          f"(per-scalar {per_scalar:.1e}, {layout.m} scalars), {elapsed:.2f} s")
    assert ok


def test_criterion_03_synthesis_feasible(acceptance_log, default_synthesis, afr_plant):
    cert = default_synthesis["cert"]
    elapsed = default_synthesis["elapsed"]
    if cert is None:
        acceptance_log(3, False, f"no certificate (exit code {default_synthesis['code']})")
        pytest.fail("default synthesis produced no certificate")
    opts = cert.provenance["options"]
    defaults_ok = (opts["grid_counts"] == [5] and opts["lambda2"] == [0.1, 1.0, 10.0]
                   and opts["lambda3"] == [0.1, 1.0, 10.0] and opts["lambda4"] == [0.1, 1.0, 10.0]
                   and opts["lambda5"] == 0.0 and opts["margin"] == 1e-7)
    rep = check_certificate(cert, afr_plant, make_grid(afr_plant.schedule, [50]))
    ok = (default_synthesis["code"] == 0 and defaults_ok and math.isfinite(cert.gamma)
          and cert.gamma > 0 and rep.max_lmi_eig <= 1e-6 and rep.min_P_eig >= -1e-9
          and rep.min_V_eig >= -1e-9 and elapsed < 600.0)
    acceptance_log(3, ok, f"gamma={cert.gamma:.6g} lambdas={list(cert.lambdas)}, dense max eig "
                          f"{rep.max_lmi_eig:.2e}, min eig P {rep.min_P_eig:.3g}, V "
                          f"{rep.min_V_eig:.3g}, {elapsed:.0f} s")
    assert ok


def test_criterion_04_reconstruction_roundtrip(acceptance_log, afr_cert, afr_plant):
    t0 = time.perf_counter()
    grid = make_grid(afr_plant.schedule, [50])
    worst = max(roundtrip_error(afr_cert, afr_plant, r) for r in grid.points)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10.0
    acceptance_log(4, ok, f"worst relative hat error {worst:.2e} over {len(grid)} points, "
                          f"{elapsed:.2f} s")
    assert ok


def _series_zoh(A, B, h, terms=40):
    n = A.shape[0]
    E, Phi, P = np.zeros((n, n)), np.zeros((n, n)), np.eye(n)
    for j in range(terms):
        E += P * h ** j / math.factorial(j)
        Phi += P * h ** (j + 1) / math.factorial(j + 1)
        P = P @ A
    return E, Phi @ B


def test_criterion_05_discretization_oracles(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_sum = 0.0
    for _ in range(10_000):
        t_l = rng.uniform(-5, 5)
        t_l1 = t_l + rng.uniform(1e-3, 0.2)
        t_l2 = t_l1 + rng.uniform(1e-3, 0.2)
        tau = rng.uniform(0.01, 0.3)
        a = rng.uniform(t_l, t_l1)
        b = rng.uniform(t_l1, t_l2)
        c1, c2, c3, c4 = interp_coeffs(a + tau, b + tau, tau, t_l, t_l1, t_l2)
        worst_sum = max(worst_sum, abs(c1 + c2 - 1), abs(c3 + c4 - 1))

    mats = [rng.normal(size=(4, 4)) for _ in range(20)]
    S = rng.normal(size=(4, 4))
    S[:, 2] = 0.0
    mats += [S, np.zeros((3, 3)), np.triu(rng.normal(size=(5, 5)), 1),
             np.array([[0.0, 1.0], [0.0, 0.0]])]
    worst_phi = 0.0
    for A in mats:
        for h in (1e-4, 0.01, 0.3):
            E, Phi = matrix_phi(A, h)
            rel = np.linalg.norm(E - np.eye(len(A)) - A @ Phi) / (
                1 + np.linalg.norm(A) * np.linalg.norm(Phi))
            worst_phi = max(worst_phi, float(rel))

    worst_zoh = 0.0
    for _ in range(20):
        A, B = rng.normal(size=(4, 4)), rng.normal(size=(4, 1))
        Z = np.zeros((4, 4))
        c = ControllerMatrices(A, Z, Z, B, np.ones((1, 4)), np.zeros((1, 1)), np.eye(4), np.eye(4))
        h = rng.uniform(0.003, 0.02)
        taps = discretize_step(c, 3 * h, 4 * h, 1.5 * h, [0.0, h, 2 * h, 3 * h])
        E, Bd = _series_zoh(A, B, h)
        worst_zoh = max(worst_zoh, float(np.max(np.abs(taps.A_d - E))),
                        float(np.max(np.abs(taps.B_d - Bd))))
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-12 and worst_phi <= 1e-12 and worst_zoh <= 1e-10 and elapsed < 30.0
    acceptance_log(5, ok, f"|c1+c2-1|,|c3+c4-1| <= {worst_sum:.1e}; E-I-A*Phi rel {worst_phi:.1e}; "
                          f"ZOH vs series {worst_zoh:.1e}; {elapsed:.2f} s")
    assert ok


def _integrate(plant, h, t_end):
    buf = HistoryBuffer(plant.initial_history)
    buf.append(0.0, plant.initial_history)
    for i in range(int(round(t_end / h))):
        dde_step(plant, buf, [0.5], [0.0], buf.newest, (i + 1) * h - buf.newest)
    return buf.states[-1][0]


def test_criterion_06_dde_oracles(acceptance_log):
    t0 = time.perf_counter()
    ode = scalar_delay_plant(a=-1.0, a_tau=0.0, b2=0.0, phi=1.0)
    err_ode = abs(_integrate(ode, 1e-3, 1.0) - math.exp(-1.0))
    dde = scalar_delay_plant(a=0.0, a_tau=-1.0, b2=0.0, tau=0.1, phi=1.0)
    err_dde = abs(_integrate(dde, 1e-2, 5.0) - _integrate(dde, 1e-3, 5.0))
    elapsed = time.perf_counter() - t0
    ok = err_ode <= 1e-6 and err_dde <= 1e-4 and elapsed < 10.0
    acceptance_log(6, ok, f"ODE error {err_ode:.1e}, DDE error vs 10x finer {err_dde:.1e}, "
                          f"{elapsed:.2f} s")
    assert ok


def test_criterion_07_tracking(acceptance_log, afr_cert, afr_plant):
    t0 = time.perf_counter()
    trace, m = run_scenario("tracking-no-disturbance", RunConfig(), afr_cert, afr_plant)
    elapsed = time.perf_counter() - t0
    wins = reference_windows(trace)
    sse = [metrics(trace, w)["steady_state_error"] for w in wins]
    omega = trace["omega"]
    refs = sorted({float(v) for v in trace["r"]})
    ok = (not trace.halted and max(sse) <= 0.01 and elapsed < 120.0
          and omega.min() == 800.0 and omega.max() == 4000.0 and refs == [0.9, 1.0, 1.1])
    acceptance_log(7, ok, f"steady-state error per window {[round(e, 5) for e in sse]}, "
                          f"halted={trace.halted}, {elapsed:.0f} s")
    assert ok


def test_criterion_08_twc_recovery(acceptance_log, afr_cert, afr_plant):
    t0 = time.perf_counter()
    details, ok = [], True
    for name in ("oxygen-800rpm", "oxygen-3000rpm"):
        trace, _ = run_scenario(name, RunConfig(), afr_cert, afr_plant)
        rec = twc_recovery(trace, delay=10.0)
        worst = max(r["max_abs_dm_o2"] for r in rec)
        peak = max(r["peak_abs_dm_o2"] for r in rec)
        ok = ok and not trace.halted and len(rec) == 2 and worst <= 0.01
        details.append(f"{name}: peak {peak:.4f}, after 10 s {worst:.4f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 120.0
    acceptance_log(8, ok, "; ".join(details) + f"; {elapsed:.0f} s")
    assert ok


def test_criterion_09_energy_bound(acceptance_log, afr_cert, afr_plant):
    t0 = time.perf_counter()
    bound = 1.05 * afr_cert.gamma
    gains, ok = {}, True
    for name in ("energy-pulse", "energy-doublet", "energy-triangle"):
        trace, m = run_scenario(name, RunConfig(), afr_cert, afr_plant)
        g = m["overall"]["l2_gain"]
        gains[name] = g
        ok = ok and not trace.halted and g is not None and g <= bound
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 180.0
    acceptance_log(9, ok, ", ".join(f"{k} {v:.3f}" for k, v in gains.items())
                   + f" vs 1.05*gamma = {bound:.3f}; {elapsed:.0f} s")
    assert ok


def test_criterion_10_compare_harness(acceptance_log, default_synthesis, tmp_path):
    cert_path = str(default_synthesis["out"] / "certificate.json")
    runs, times = [], []
    for tag in ("a", "b"):
        out = tmp_path / tag
        t0 = time.perf_counter()
        code = main(["compare", "--scenario", "tracking-no-disturbance", "--certificate", cert_path,
                     "--out", str(out)])
        times.append(time.perf_counter() - t0)
        runs.append((code, out / "compare-tracking-no-disturbance"))
    names = ["proposed.csv", "baseline.csv", "report.json", "report.txt", "overlay.svg"]
    present = all((d / n).exists() for _, d in runs for n in names)
    identical = present and all(filecmp.cmp(runs[0][1] / n, runs[1][1] / n, shallow=False)
                                for n in names)
    complete = False
    if present:
        rep = json.loads((runs[0][1] / "report.json").read_text())
        keys = ("overshoot_pct", "settling_time", "steady_state_error", "l2_gain", "max_abs_dm_o2")
        complete = all(set(keys) <= set(rep["branches"][b]["overall"])
                       and len(rep["branches"][b]["windows"]) == 5
                       for b in ("proposed", "baseline"))
    ok = (all(c == 0 for c, _ in runs) and present and identical and complete
          and max(times) < 180.0)
    acceptance_log(10, ok, f"exit codes {[c for c, _ in runs]}, artifacts present={present}, "
                           f"byte-identical={identical}, metrics complete={complete}, "
                           f"{max(times):.0f} s per run")
    assert ok
