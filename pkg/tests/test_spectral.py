from __future__ import annotations

import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from anosovlab.errors import InvalidInput, InvalidRates, UnsupportedDimension, WrongSignature
from anosovlab.spectral import (ETA_THRESHOLD, IntegerAutomorphism, RateBounds, RateConditionQuery,
                                brin_pinching_check, bunching_from_rates, charpoly,
                                codim1_bunching_check, find_monic_factor, genericity_check,
                                gmt_rate_condition, is_irreducible, linear_rates,
                                matching_regularity_k, spectral_analysis)
from oracles import CAT, T3


def sympy_charpoly(m):
    return [int(c) for c in sympy.Matrix(m).charpoly().all_coeffs()]


def test_rejects_non_unimodular():
    with pytest.raises(InvalidInput):
        IntegerAutomorphism.from_array([[2, 0], [0, 1]])
    with pytest.raises(InvalidInput):
        IntegerAutomorphism.from_array([[1, 2, 3], [4, 5, 6]])


def test_charpoly_known():
    assert charpoly(CAT) == [1, -3, 1]
    assert charpoly(T3) == [1, 1, 0, -1]


def test_inverse_and_power():
    M = IntegerAutomorphism.from_array(T3)
    assert np.array_equal(M.array @ M.inverse().array, np.eye(3))
    assert M.power(5) == np.linalg.matrix_power(M.array.astype(int), 5).tolist()


def _product_of_elementary(ops):
    m = np.eye(3, dtype=int)
    for i, j, c, sign in ops:
        e = np.eye(3, dtype=int)
        if i != j:
            e[i, j] = c
        else:
            e[i, i] = sign
        m = m @ e
    return m.tolist()


# products of elementary and sign-flip matrices are exactly the unimodular ones
unimodular_3x3 = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(-2, 2),
                                    st.sampled_from([-1, 1])),
                          min_size=1, max_size=8).map(_product_of_elementary)


@settings(max_examples=40, deadline=None)
@given(unimodular_3x3)
def test_charpoly_matches_sympy(m):
    assert charpoly(m) == sympy_charpoly(m)


@settings(max_examples=40, deadline=None)
@given(unimodular_3x3)
def test_irreducibility_matches_sympy(m):
    x = sympy.symbols("x")
    expected = sympy.Poly(sympy.Matrix(m).charpoly(x).as_expr(), x).is_irreducible
    assert is_irreducible(m) == expected


def test_block_matrix_reducible():
    m = [[2, 1, 0, 0], [1, 1, 0, 0], [0, 0, 2, 1], [0, 0, 1, 1]]
    assert not is_irreducible(m)
    assert find_monic_factor(charpoly(m)) == [1, -3, 1]


def test_irreducible_examples():
    assert is_irreducible(CAT)
    assert is_irreducible(T3)


def test_irreducibility_dimension_limit():
    big = np.eye(7, dtype=int).tolist()
    with pytest.raises(UnsupportedDimension):
        is_irreducible(big)


def test_spectral_cat():
    sd = spectral_analysis(CAT)
    phi2 = (3 + math.sqrt(5)) / 2
    assert sd.hyperbolic and sd.dim_stable == 1 and sd.dim_unstable == 1
    assert sd.moduli_unstable[0] == pytest.approx(phi2, rel=1e-14)
    assert sd.mu == pytest.approx(phi2, rel=1e-14)


def test_spectral_t3_complex_pair():
    sd = spectral_analysis(T3)
    assert (sd.dim_stable, sd.dim_unstable) == (1, 2)
    assert len(sd.moduli_unstable) == 1
    assert sd.moduli_stable[0] == pytest.approx(0.754877666246693, rel=1e-12)
    assert sd.moduli_unstable[0] == pytest.approx(1.0 / math.sqrt(0.754877666246693), rel=1e-12)
    assert sd.mu == pytest.approx(1.324717957244746, rel=1e-12)


def test_nonhyperbolic_detected():
    sd = spectral_analysis([[1, 1], [0, 1]])
    assert not sd.hyperbolic


def test_genericity():
    assert genericity_check(CAT).generic
    assert genericity_check(T3).generic
    assert not genericity_check([[2, 1, 0, 0], [1, 1, 0, 0], [0, 0, 2, 1], [0, 0, 1, 1]]).generic


def test_rate_validation():
    with pytest.raises(InvalidRates):
        RateBounds(0.5, 2, 2, 3)
    with pytest.raises(InvalidRates):
        RateBounds(3, 2, 2, 3)


def test_linear_rates_t3():
    r = linear_rates(T3)
    assert r.lambda_minus == pytest.approx(r.lambda_plus)
    assert r.mu_minus == pytest.approx(1.324717957244746, rel=1e-12)


def test_bunching_rates_example():
    lam = 1.7
    r = RateBounds(mu_minus=lam ** 3, mu_plus=lam ** 6, lambda_minus=lam, lambda_plus=lam ** 2)
    b = bunching_from_rates(r)
    assert b.b_s == pytest.approx(2.0, abs=1e-12)
    assert b.b_u == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert brin_pinching_check(r) == {"first": False, "second": False}


def test_gmt_condition_boundary_is_false():
    lam = 1.7
    r = RateBounds(lam ** 3, lam ** 6, lam, lam ** 2)
    # exponent min(kappa, 2 kappa / 3, 1) = 2/3 at kappa = 1 gives exactly 1
    assert not gmt_rate_condition(RateConditionQuery(1.0, r))


def test_gmt_condition_true_case():
    r = RateBounds(mu_minus=10.0, mu_plus=20.0, lambda_minus=1.5, lambda_plus=1.6)
    assert gmt_rate_condition(RateConditionQuery(1.0, r))


def test_kappa_validated():
    r = linear_rates(CAT)
    with pytest.raises(InvalidInput):
        RateConditionQuery(0.0, r)


def test_codim1_bunching():
    assert codim1_bunching_check(spectral_analysis(T3))
    with pytest.raises(WrongSignature):
        codim1_bunching_check(spectral_analysis([[0, 0, 1], [1, 0, 0], [0, 1, 1]]))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 5.0))
def test_matching_k_equivalence(eta):
    r = matching_regularity_k(eta)
    assert r["k"] == pytest.approx((2 * eta + 2) / (2 * eta + 1))
    if abs(eta - ETA_THRESHOLD) > 1e-9:
        assert r["admissible"] == (r["k"] > eta) == (2 * eta ** 2 - eta - 2 < 0)


def test_matching_k_threshold_flip():
    assert matching_regularity_k(ETA_THRESHOLD - 1e-12)["admissible"]
    assert not matching_regularity_k(ETA_THRESHOLD + 1e-12)["admissible"]
