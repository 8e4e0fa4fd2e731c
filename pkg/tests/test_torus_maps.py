from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anosovlab.errors import InvalidInput, NotAnosovEvidence
from anosovlab.torus_maps import (FourierMode, PerturbedMap, backward_orbit, estimate_rates,
                                  forward_orbit, mod1, splitting_at, splitting_frames,
                                  subspace_defect, torus_distance)
from conftest import T3_MODES, cat_map, t3_map
from oracles import CAT, T3

points3 = st.lists(st.floats(0, 1, exclude_max=True), min_size=3, max_size=3).map(np.array)


def test_mode_validation():
    with pytest.raises(InvalidInput):
        FourierMode((1.5, 0), (1.0, 0.0))
    with pytest.raises(InvalidInput):
        FourierMode((0, 0), (1.0, 0.0), "sin")
    with pytest.raises(InvalidInput):
        FourierMode((1, 0), (1.0,))


def test_linear_map_is_matrix_mod_one(rng):
    f = PerturbedMap.linear_map(T3)
    X = rng.random((50, 3))
    assert np.allclose(f(X), mod1(X @ np.array(T3, float).T), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(points3)
def test_inverse_round_trip(x):
    f = t3_map(1e-3)
    assert np.max(torus_distance(f.inverse_eval(f(x)), x)) < 1e-13


def test_derivative_matches_finite_differences(rng):
    f = t3_map(1e-2)
    x = rng.random(3)
    h = 1e-6
    fd = np.stack([(f.eval_lift(x + h * e) - f.eval_lift(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(f.derivative(x), fd, atol=1e-8)


def test_volume_preserving_projection_gives_unit_determinant(rng):
    f = PerturbedMap(PerturbedMap.linear_map(T3).linear, T3_MODES, 1e-2, True)
    dets = np.linalg.det(f.derivative(rng.random((100, 3))))
    assert np.max(np.abs(np.abs(dets) - 1)) < 1e-12


def test_dict_round_trip():
    f = t3_map(2e-3)
    g = PerturbedMap.from_dict(f.to_dict())
    assert g.to_dict() == f.to_dict()


def test_orbit_helpers_are_consistent(rng):
    f = cat_map(1e-3)
    x = rng.random(2)
    fwd = forward_orbit(f, x, 10)
    back = backward_orbit(f, fwd[-1], 10)
    # backward iteration amplifies the stable error, so compare the first few steps only
    assert np.max(torus_distance(back[-4:], fwd[-4:])) < 1e-12
    assert np.array_equal(fwd[0], x)


def test_splitting_invariance(t3, rng):
    X = rng.random((20, 3))
    Qs, Qu, res = splitting_frames(t3, X)
    assert np.max(res) < 1e-10
    J = t3.derivative(X)
    Qs1, Qu1, _ = splitting_frames(t3, t3(X))
    assert np.max(subspace_defect(J @ Qu, Qu1)) < 1e-10
    assert np.max(subspace_defect(J @ Qs, Qs1)) < 1e-10


def test_splitting_linear_matches_eigenspaces():
    f = PerturbedMap.linear_map(CAT)
    sf = splitting_at(f, np.array([0.3, 0.1]))
    w, V = np.linalg.eig(np.array(CAT, float))
    vu = V[:, np.argmax(np.abs(w))]
    assert subspace_defect(vu[:, None], sf.unstable_basis) < 1e-12


def test_rates_linear_cat_exact():
    r = estimate_rates(PerturbedMap.linear_map(CAT))
    lam = (3 + 5 ** 0.5) / 2
    for v in (r.mu_minus, r.mu_plus, r.lambda_minus, r.lambda_plus):
        assert v == pytest.approx(lam, rel=1e-10)


def test_rates_t3_bracket_linear():
    r = estimate_rates(t3_map(1e-3))
    assert 1.1 < r.lambda_minus <= r.lambda_plus < 1.2
    assert r.mu_minus == pytest.approx(1.3247, abs=5e-3)


def test_rates_reject_non_anosov():
    f = PerturbedMap.linear_map([[1, 1], [0, 1]])
    with pytest.raises(NotAnosovEvidence):
        estimate_rates(f)


def test_budget_flags_large_epsilon():
    f = t3_map(1.0)
    assert not f.within_budget
    assert t3_map(1e-4).within_budget


def test_points_validated(t3):
    from anosovlab.torus_maps import coerce_points
    with pytest.raises(InvalidInput):
        coerce_points([0.1, 0.2], 3)
    with pytest.raises(InvalidInput):
        coerce_points([0.1, np.nan, 0.2], 3)
