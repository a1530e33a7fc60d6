import time
from pathlib import Path

import numpy as np
import pytest

from sdlpv.engine import build_afr_plant
from sdlpv.lpv import AffineMatrixFn, DelayLaw, LPVDelayPlant, SamplingLaw, ScheduleSet
from sdlpv.synthesis import SynthesisCertificate

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def acceptance_log():
    def record(num, passed, detail):
        line = f"criterion {num:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[num] = line
        print(line)
        return passed
    return record


@pytest.fixture(scope="session")
def afr_plant():
    return build_afr_plant()


@pytest.fixture(scope="session")
def default_synthesis(tmp_path_factory):
    """Full default synthesis through the command line, run once per session."""
    from sdlpv.cli import main

    out = tmp_path_factory.mktemp("synth")
    t0 = time.perf_counter()
    code = main(["synthesize", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    cert = None
    if (out / "certificate.json").exists():
        cert = SynthesisCertificate.from_json((out / "certificate.json").read_text())
    return {"code": code, "elapsed": elapsed, "out": Path(out), "cert": cert}


@pytest.fixture(scope="session")
def afr_cert(default_synthesis):
    if default_synthesis["cert"] is None:
        pytest.fail("default synthesis produced no certificate")
    return default_synthesis["cert"]


def scalar_delay_plant(a=-1.0, a_tau=0.0, b2=1.0, tau=0.1, period=0.05, rho_range=(0.0, 1.0),
                       nu=0.0, phi=1.0, a_slope=0.0):
    """One-state delayed plant with a constant delay law, for fast tests."""
    def c(v):
        return AffineMatrixFn.constant(np.atleast_2d(v))

    return LPVDelayPlant(
        A=AffineMatrixFn.from_terms([[a]], [[[a_slope]]]),
        A_tau=c(a_tau), B1=c([[1.0, 0.0]]), B2=c(b2), C1=c([[1.0]]), C1_tau=c(0.0),
        D11=c([[0.0, 0.0]]), D12=c([[0.0]]), C2=c(1.0),
        schedule=ScheduleSet([rho_range[0]], [rho_range[1]], [nu]),
        delay=DelayLaw(lambda r: tau, lambda r: np.zeros(1), tau, 0.0),
        sampling=SamplingLaw(lambda r: period, lambda r: np.zeros(1), period),
        initial_history=np.array([phi]),
    )


@pytest.fixture
def scalar_plant():
    return scalar_delay_plant
