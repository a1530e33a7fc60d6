import warnings
from dataclasses import replace

import numpy as np
import pytest

from sdlpv.engine import build_afr_plant
from sdlpv.lpv import (AffineMatrixFn, DelayLaw, OutOfScheduleWarning, ScheduleSet, eval_affine,
                       make_grid, validate_plant, vertex_signs)


def test_eval_affine_base_case():
    M = AffineMatrixFn.from_terms([[1.0]], [[[2.0]]])
    assert np.array_equal(eval_affine(M, [0.0]), [[1.0]])


def test_eval_affine_engine_entry():
    M = AffineMatrixFn.from_terms([[0.0]], [[[-1 / 100]]])
    np.testing.assert_allclose(eval_affine(M, [1000.0]), [[-10.0]], rtol=1e-15)


def test_eval_affine_constant_identity():
    M = AffineMatrixFn.constant(np.eye(2))
    for r in (-5.0, 0.0, 3.7e3):
        assert np.array_equal(eval_affine(M, [r]), np.eye(2))


def test_eval_affine_length_mismatch():
    M = AffineMatrixFn.constant(np.eye(2), n_s=2)
    with pytest.raises(ValueError):
        eval_affine(M, [1.0])


def test_eval_affine_out_of_set_warns():
    s = ScheduleSet([0.0], [1.0], [0.0])
    M = AffineMatrixFn.constant([[1.0]])
    with pytest.warns(OutOfScheduleWarning):
        eval_affine(M, [2.0], s)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eval_affine(M, [1.0], s)


def test_affine_mismatched_coefficient_shapes():
    with pytest.raises(ValueError):
        AffineMatrixFn.from_terms(np.eye(2), [np.eye(3)])


def test_affine_combination_property():
    rng = np.random.default_rng(0)
    M = AffineMatrixFn(rng.normal(size=(3, 4, 5)))
    for _ in range(50):
        r1, r2 = rng.normal(size=2) * 100, rng.normal(size=2) * 100
        a = rng.uniform()
        lhs = eval_affine(M, a * r1 + (1 - a) * r2)
        rhs = a * eval_affine(M, r1) + (1 - a) * eval_affine(M, r2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()))


def test_schedule_invariants():
    with pytest.raises(ValueError):
        ScheduleSet([1.0], [1.0], [0.0])
    with pytest.raises(ValueError):
        ScheduleSet([0.0], [1.0], [-1.0])


def test_make_grid_engine_range():
    g = make_grid(ScheduleSet([800.0], [4000.0], [100.0]), [5])
    assert g.points[:, 0].tolist() == [800.0, 1600.0, 2400.0, 3200.0, 4000.0]


def test_make_grid_endpoints_only():
    g = make_grid(ScheduleSet([0.0], [1.0], [0.0]), [2])
    assert g.points[:, 0].tolist() == [0.0, 1.0]


def test_make_grid_product():
    s = ScheduleSet([0.0, -1.0], [1.0, 1.0], [0.0, 0.0])
    g = make_grid(s, (2, 3))
    assert len(g) == 6
    assert g.counts == (2, 3)
    for ax, lo, hi in zip(g.axes, s.lower, s.upper):
        assert ax[0] == lo and ax[-1] == hi
        assert np.all(np.diff(ax) > 0)
    assert all(s.contains(p) for p in g)


def test_make_grid_rejects_small_count():
    with pytest.raises(ValueError):
        make_grid(ScheduleSet([0.0], [1.0], [0.0]), [1])


@pytest.mark.parametrize("n_s,count", [(1, 2), (2, 4), (3, 8)])
def test_vertex_signs(n_s, count):
    v = vertex_signs(n_s)
    assert v.shape == (count, n_s)
    assert len({tuple(r) for r in v}) == count
    assert set(np.unique(v)) == {-1.0, 1.0}


def test_vertex_signs_rejects_zero():
    with pytest.raises(ValueError):
        vertex_signs(0)


def test_validate_afr_plant_clean():
    assert validate_plant(build_afr_plant()) == []


def test_validate_wrong_b2_rows(scalar_plant):
    p = scalar_plant()
    bad = p.with_matrices(B2=AffineMatrixFn.constant(np.ones((2, 1))))
    kinds = [f.kind for f in validate_plant(bad)]
    assert kinds.count("dimension") == 1


def test_validate_negative_delay(scalar_plant):
    p = scalar_plant()
    law = DelayLaw(lambda r: -1.0, lambda r: np.zeros(1), 0.1, 0.0)
    kinds = [f.kind for f in validate_plant(replace(p, delay=law))]
    assert "delay-bound" in kinds


def test_validate_wrong_derivative(scalar_plant):
    p = scalar_plant()
    law = DelayLaw(lambda r: 0.1 * r[0], lambda r: np.array([-0.1]), 0.1, 0.0)
    kinds = [f.kind for f in validate_plant(replace(p, delay=law))]
    assert kinds == ["derivative"]

