import math

import numpy as np
import pytest

from sdlpv.engine import (EngineConfig, TwcState, build_afr_plant, delay_law_engine,
                          sampling_law_engine, time_constant, twc_step)


@pytest.mark.parametrize("omega,expected", [(1000, 0.1), (100, 1.0), (4000, 0.025)])
def test_time_constant(omega, expected):
    assert time_constant(omega) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("omega,expected", [(800, 0.225), (4000, 0.045), (1800, 0.1)])
def test_delay_law(omega, expected):
    assert delay_law_engine(omega) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("omega,conv,expected", [
    (800, "literal-4pi", 0.015708),
    (800, "physical-120", 0.15),
    (4000, "literal-4pi", 0.0031416),
])
def test_sampling_law(omega, conv, expected):
    assert sampling_law_engine(omega, conv) == pytest.approx(expected, abs=5e-7)


@pytest.mark.parametrize("fn", [time_constant, delay_law_engine, sampling_law_engine])
def test_laws_reject_nonpositive_speed(fn):
    with pytest.raises(ValueError):
        fn(0.0)


def test_sampling_law_unknown_convention():
    with pytest.raises(ValueError):
        sampling_law_engine(1000, "rad-per-s")


@pytest.mark.parametrize("kw", [{"cyl": 1}, {"omega_gain": 0.0}, {"eps1": 0.0},
                                {"speed_min": 4000.0, "speed_max": 800.0},
                                {"convention": "bogus"}, {"psi": -1.0}])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        EngineConfig(**kw)


def test_plant_matrices_at_1000():
    p = build_afr_plant()
    A = p.A([1000.0])
    assert A[0, 0] == pytest.approx(-10.0, rel=1e-14)
    assert A[1, 1] == -50.0
    expected = np.array([[-10, 0, 0, 0], [0, -50, 0, 0], [-1, 0, -1e-3, 0], [0, 0, 1, -1e-3]])
    np.testing.assert_allclose(A, expected, rtol=1e-14)


def test_plant_delay_matrix_at_2000():
    At = build_afr_plant().A_tau([2000.0])
    assert At[0, 1] == pytest.approx(20.0, rel=1e-14)
    mask = np.ones_like(At, dtype=bool)
    mask[0, 1] = False
    assert not np.any(At[mask])


def test_plant_io_structure():
    p = build_afr_plant(EngineConfig(phi=2.0, psi=0.5, xi=0.3))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert (p.C2([1000.0]) @ x).tolist() == [3.0]
    np.testing.assert_array_equal(p.B1([900.0]), [[0, 0], [0, 0], [1, -1], [0, 0]])
    np.testing.assert_array_equal(p.B2([900.0]).ravel(), [0, 50, 0, 0])
    np.testing.assert_array_equal(p.C1([900.0]), [[0, 0, 2, 0], [0, 0, 0, 0.5], [0, 0, 0, 0]])
    np.testing.assert_array_equal(p.D12([900.0]).ravel(), [0, 0, 0.3])
    assert not np.any(p.D11([900.0])) and not np.any(p.C1_tau([900.0]))
    assert p.dims() == {"n": 4, "n_w": 2, "n_u": 1, "n_z": 3, "n_y": 1, "n_s": 1}


def test_plant_laws_and_bounds():
    p = build_afr_plant()
    assert p.delay.upper == pytest.approx(0.225)
    assert p.sampling.upper == pytest.approx(4 * math.pi / 800)
    q = build_afr_plant(EngineConfig(convention="physical-120"))
    assert q.sampling([800.0]) == pytest.approx(0.15)
    assert p.schedule.rate_bound.tolist() == [100.0]


def test_delay_envelope():
    p = build_afr_plant()
    taus = np.array([p.delay([w]) for w in np.linspace(800, 4000, 1001)])
    assert taus.min() == pytest.approx(0.045, abs=1e-12)
    assert taus.max() == pytest.approx(0.225, abs=1e-12)
    assert 0.020 <= taus.min() and taus.max() <= 0.500


def test_plant_exactly_affine():
    p = build_afr_plant()
    for M in (p.A, p.A_tau):
        for w in (800.0, 1234.5, 3000.0):
            second = M([w + 100]) - 2 * M([w]) + M([w - 100])
            assert np.max(np.abs(second)) <= 1e-12


def test_open_loop_stable_over_range():
    p = build_afr_plant()
    for w in np.linspace(800, 4000, 33):
        assert np.max(np.linalg.eigvals(p.A([w])).real) < 0


def test_time_constant_matches_plant_pole():
    p = build_afr_plant()
    for w in (800.0, 2500.0, 4000.0):
        assert -p.A([w])[0, 0] == pytest.approx(1 / time_constant(w), rel=1e-14)


def test_twc_zero_rate_unchanged():
    s = TwcState(0.3)
    assert twc_step(s, 0.0, 5.0) == s


def test_twc_constant_rate_integral():
    s = TwcState()
    for _ in range(20):
        s = twc_step(s, 0.1, 0.1)
    assert s.delta_m_o2 == pytest.approx(0.2, abs=1e-12)


def test_twc_sign_flip():
    a = twc_step(TwcState(), 0.07, 0.3).delta_m_o2
    b = twc_step(TwcState(), -0.07, 0.3).delta_m_o2
    assert a == -b


def test_twc_partition_independent():
    rng = np.random.default_rng(3)
    cuts = np.sort(rng.uniform(0, 2.0, size=40))
    edges = np.concatenate([[0.0], cuts, [2.0]])
    s = TwcState()
    for dt in np.diff(edges):
        if dt > 0:
            s = twc_step(s, 0.05, dt)
    assert s.delta_m_o2 == pytest.approx(twc_step(TwcState(), 0.05, 2.0).delta_m_o2, abs=1e-12)


def test_twc_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        twc_step(TwcState(), 0.1, 0.0)
