from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from anosovlab.errors import Degenerate, InvalidInput
from anosovlab.periodic import (build_catalog, catalog_csv, continue_orbit, lattice_class,
                                linear_fixed_points, minimal_period, periodic_data,
                                smith_normal_form)
from anosovlab.torus_maps import PerturbedMap, torus_distance
from conftest import cat_map, t3_map
from oracles import CAT, T3


def det_count(L, k):
    M = sympy.Matrix(L) ** k - sympy.eye(len(L))
    return abs(int(M.det()))


small_int_matrices = st.integers(2, 4).flatmap(
    lambda n: st.lists(st.lists(st.integers(-6, 6), min_size=n, max_size=n), min_size=n, max_size=n))


@settings(max_examples=60, deadline=None)
@given(small_int_matrices)
def test_smith_normal_form_properties(A):
    D, U, V = smith_normal_form(A)
    Um, Am, Vm, Dm = (sympy.Matrix(M) for M in (U, A, V, D))
    assert Um * Am * Vm == Dm
    assert abs(Um.det()) == 1 and abs(Vm.det()) == 1
    n = len(A)
    diag = [D[i][i] for i in range(n)]
    assert all(D[i][j] == 0 for i in range(n) for j in range(n) if i != j)
    nz = [v for v in diag if v]
    assert all(v > 0 for v in nz)
    assert all(nz[i + 1] % nz[i] == 0 for i in range(len(nz) - 1))
    assert abs(Am.det()) == abs(np.prod(diag, dtype=object))


@pytest.mark.parametrize("L,kmax", [(CAT, 6), (T3, 4)])
def test_seed_counts_match_determinant(L, kmax):
    for k in range(1, kmax + 1):
        seeds = linear_fixed_points(L, k)
        assert len(seeds) == det_count(L, k)
        assert len({s.coords for s in seeds}) == len(seeds)


def test_seeds_are_exact_fixed_points():
    Lk = sympy.Matrix(CAT) ** 3
    for s in linear_fixed_points(CAT, 3):
        y = Lk * sympy.Matrix([sympy.Rational(c.numerator, c.denominator) for c in s.coords])
        diff = y - sympy.Matrix([sympy.Rational(c.numerator, c.denominator) for c in s.coords])
        assert all(v.is_integer for v in diff)


def test_degenerate_power_rejected():
    with pytest.raises(Degenerate):
        linear_fixed_points([[0, 1], [-1, 0]], 4)


def test_invalid_period():
    with pytest.raises(InvalidInput):
        linear_fixed_points(CAT, 0)


def test_minimal_period_and_lattice():
    x = (Fraction(1, 5), Fraction(2, 5))
    k = minimal_period(CAT, x, 4)
    assert 4 % k == 0
    m = lattice_class(CAT, x, k)
    y = np.linalg.matrix_power(np.array(CAT), k) @ np.array([0.2, 0.4]) - np.array([0.2, 0.4])
    assert np.allclose(m, y)


def test_continuation_residual_and_periodicity():
    f = cat_map(1e-3)
    for s in linear_fixed_points(CAT, 4)[:10]:
        o = continue_orbit(f, s, 4)
        assert o.residual < 1e-10
        y = o.base
        for _ in range(o.period):
            y = f(y)
        assert torus_distance(y, o.base) < 1e-10
        assert torus_distance(o.base, s.array) < 1e-2


def test_catalog_one_representative_per_cycle():
    cat = build_catalog(PerturbedMap.linear_map(CAT), 4)
    total = sum(o.period for o in cat.orbits)
    # every point of minimal period <= 4 appears exactly once in some cycle
    assert total == len({s.coords for k in range(1, 5) for s in linear_fixed_points(CAT, k)
                         if minimal_period(CAT, s.coords, k) == k})


def test_periodic_data_linear_exact():
    f = PerturbedMap.linear_map(T3)
    o = build_catalog(f, 1).orbits[0]
    pd = periodic_data(f, o)
    lam_s = 0.754877666246693
    assert pd.jac_s == pytest.approx(lam_s, rel=1e-12)
    assert pd.jac_u == pytest.approx(1 / lam_s, rel=1e-12)
    assert abs(pd.jac_full) == pytest.approx(1.0, rel=1e-14)


def test_periodic_data_determinant_relation():
    f = t3_map(1e-2)
    for o in build_catalog(f, 4).orbits:
        pd = periodic_data(f, o)
        assert abs(pd.jac_full) == pytest.approx(pd.jac_s * pd.jac_u, rel=1e-10)


def test_catalog_csv_header(cat):
    text = catalog_csv(cat, build_catalog(cat, 2))
    assert text.splitlines()[0].startswith("period,index,lattice,x0,x1")
