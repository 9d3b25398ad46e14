from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from renormflow.scaling import (CoeffIndex, DimensionError, Dimensions, IndexList, classify,
                                epsilon_diamond, i_diamond, i_sharp, multi_indices, rho,
                                rho_diamond, rho_list, vanishing, weight_lists)

D5 = Dimensions(5, 2)


def _valid_dims(d_max=6, k_min=1):
    # sigma on a rational grid inside (d/3, d/2]; near d/3 the number of
    # relevant orders explodes, so classify-heavy tests raise k_min
    @st.composite
    def build(draw):
        d = draw(st.integers(1, d_max))
        lo, hi = Fraction(d, 3), Fraction(d, 2)
        k = draw(st.integers(k_min, 60))
        return Dimensions(d, lo + (hi - lo) * Fraction(k, 60))
    return build()


def test_rho_examples():
    assert rho(D5, 1, 3) == 0
    assert rho(D5, 2, 1) == 0
    assert rho(D5, 2, 2) == Fraction(1, 2)
    for d, s in ((1, 0.4), (3, 1.2), (6, 3)):
        assert rho(Dimensions(d, s), 0, 0) == Fraction(-d, 2)


def test_rho_formula_with_eps():
    e = Fraction(1, 100)
    d = D5
    assert rho(d, 2, 1, 3, e) == -Fraction(5, 2) - e + (Fraction(1, 2) + 2 * e) + 2 * (1 - 6 * e) + 3


def test_dimension_fields():
    assert D5.dim_xi == Fraction(5, 2)
    assert D5.dim_phi == Fraction(1, 2)
    assert D5.dim_lambda == 1
    assert Dimensions(1, 0.45).sigma == Fraction(9, 20)


@pytest.mark.parametrize("d,s", [(0, 1), (7, 3), (1, 0.3), (1, 0.6), (5, 2.6), (3, 1)])
def test_dimension_rejects(d, s):
    with pytest.raises(DimensionError):
        Dimensions(d, s)


def test_regular_flag_extends_interval():
    assert Dimensions(1, 0.8, regular=True).sigma == Fraction(4, 5)
    with pytest.raises(DimensionError):
        Dimensions(1, 1.6, regular=True)


def test_eps_default_and_range():
    assert D5.eps == epsilon_diamond(D5) / 6
    with pytest.raises(DimensionError):
        Dimensions(5, 2, eps=epsilon_diamond(D5) / 2)
    assert Dimensions(5, 2, eps=Fraction(1, 200)).eps == Fraction(1, 200)


@pytest.mark.parametrize("d,s,expected", [(5, 2, 2), (1, 0.5, 1), (1, 0.4, 2)])
def test_i_sharp(d, s, expected):
    assert i_sharp(Dimensions(d, s)) == expected


def _eps_diamond_oracle(dim):
    # independent brute force over i <= 8, m <= 3i, l <= 10
    f = lambda i, m: -Fraction(dim.d, 2) + m * (Fraction(dim.d, 2) - dim.sigma) + i * (3 * dim.sigma - dim.d)
    idm = min(i for i in range(0, 200) if f(i + 1, 0) > 0)
    cands = [f(i, m) + l for i in range(idm + 1) for m in range(3 * i + 1) for l in range(1, 11)
             if f(i, m) + l > 0]
    return idm, min(cands), min(Fraction(dim.d, 6), (3 * dim.sigma - dim.d) / 9,
                                min(cands) / (7 + 6 * idm), dim.sigma)


@pytest.mark.parametrize("d", [1, 3, 6])
def test_epsilon_diamond_oracle_near_critical(d):
    dim = Dimensions(d, Fraction(d, 3) + Fraction(d, 60))
    idm, rd, ed = _eps_diamond_oracle(dim)
    assert (i_diamond(dim), rho_diamond(dim), epsilon_diamond(dim)) == (idm, rd, ed)
    assert idm == 10


def test_epsilon_diamond_d5():
    assert i_diamond(D5) == 2
    assert rho_diamond(D5) == Fraction(1, 2)
    assert epsilon_diamond(D5) == Fraction(1, 38)
    assert float(epsilon_diamond(D5)) == pytest.approx(0.02632, abs=1e-5)


@given(_valid_dims(k_min=10))
def test_epsilon_diamond_oracle(dim):
    idm, rd, ed = _eps_diamond_oracle(dim)
    assert (i_diamond(dim), rho_diamond(dim), epsilon_diamond(dim)) == (idm, rd, ed)
    assert ed > 0


@given(_valid_dims(k_min=10), st.fractions(0, 1))
def test_eps_preserves_relevance_sign(dim, t):
    # l >= 1, the range entering rho_diamond
    e = epsilon_diamond(dim) * t
    if e == 0 or e >= epsilon_diamond(dim):
        return
    for i in range(7):
        for m in range(3 * i + 1):
            for l in range(1, 11):
                if rho(dim, i, m, l) > 0:
                    assert rho(dim, i, m, l, e) > 0


def test_eps_preserves_relevance_sign_l0_counterexample():
    # with l = 0 the sign can flip: rho(6,2) = 1/90 > 0 at d=1, sigma=31/90,
    # while rho_eps(6,2) < 0 for eps = eps_diamond / 10
    dim = Dimensions(1, Fraction(31, 90))
    e = epsilon_diamond(dim) / 10
    assert rho(dim, 6, 2) > 0
    assert rho(dim, 6, 2, 0, e) < 0


def test_eps_preserves_relevance_sign_d5_all_l():
    e = epsilon_diamond(D5) * Fraction(99, 100)
    for i in range(7):
        for m in range(3 * i + 1):
            for l in range(11):
                if rho(D5, i, m, l) > 0:
                    assert rho(D5, i, m, l, e) > 0


@given(_valid_dims(k_min=10))
def test_rho_eps_below_rho_and_monotone(dim):
    e = dim.eps
    for i in range(7):
        for m in range(3 * i + 1):
            assert rho(dim, i, m, 0, e) < rho(dim, i, m)
            assert rho(dim, i + 1, m, 0, e) > rho(dim, i, m, 0, e)
            assert rho(dim, i, m + 1, 0, e) > rho(dim, i, m, 0, e)


def test_vanishing():
    assert vanishing(0, 1) and not vanishing(0, 0)
    assert not vanishing(1, 3) and vanishing(1, 4)
    assert not vanishing(2, 5) and vanishing(2, 6)
    assert CoeffIndex(1, 4).vanishing


def test_classify_d5():
    c = classify(D5)
    assert c.relevant_pairs == [(0, 0), (1, 0), (1, 1), (1, 2), (1, 3), (2, 0), (2, 1)]
    base = sorted((x.i, x.m) for x in c.enhanced_noise if x.order == 0)
    assert base == c.relevant_pairs
    assert all(not x.vanishing for x in c.enhanced_noise)
    assert all(x.m <= 3 * x.i for x in c.relevant)
    assert (c.i_sharp, c.i_diamond) == (2, 2)


def test_classify_weighted_entries():
    c = classify(D5)
    for x in c.relevant:
        assert rho(D5, x.i, x.m, x.order) <= 0
    # rho(1,1) = -1: one derivative on the single argument stays relevant
    assert any(x.i == 1 and x.m == 1 and x.order == 1 for x in c.relevant)
    assert not any(x.i == 2 and x.m == 1 and x.order == 1 for x in c.relevant)
    assert not any(x.i == 1 and x.order > 0 for x in c.enhanced_noise)


def test_classify_imax_guard_and_stability():
    with pytest.raises(ValueError):
        classify(D5, i_max=1)
    a, b = classify(D5), classify(D5, i_max=5)
    assert a.relevant == b.relevant
    assert a.enhanced_noise == b.enhanced_noise


@given(_valid_dims(k_min=10))
def test_noise_always_relevant(dim):
    c = classify(dim)
    assert (0, 0) in c.relevant_pairs
    assert all(x.i <= c.i_diamond for x in c.relevant)


def test_multi_indices():
    assert sorted(multi_indices(2, 2)) == [(0, 2), (1, 1), (2, 0)]
    assert len(list(multi_indices(3, 3))) == 10
    assert list(weight_lists(1, 2, 1)) == [((0,), (1,)), ((1,), (0,))]


def test_label():
    assert CoeffIndex(1, 2).label() == "(1,2,0)"
    assert CoeffIndex(2, 1, ((1, 0),)).label() == "(2,1,(1,0))"


def test_rho_list():
    white = IndexList([(0, 0), (0, 0)])
    r, rel = rho_list(D5, white)
    assert r + (white.n - 1) * 5 == 0 and rel
    single = IndexList([(2, 1, ((1, 0, 0, 0, 0),), 0, 0)])
    assert rho_list(D5, single)[0] == rho(D5, 2, 1, 1)
    pair = IndexList([(1, 0), (1, 0)])
    r, rel = rho_list(D5, pair)
    assert r + 5 == 2 and not rel


def test_index_list_sums():
    il = IndexList([(1, 2, ((1,), (0,)), 1, 2), (2, 1, ((2,),), 0, 1)])
    assert (il.n, il.i, il.m, il.a, il.s, il.r) == (2, 3, 3, 3, 1, 3)
    with pytest.raises(ValueError):
        IndexList([(1, 0, (), 2, 0)])
