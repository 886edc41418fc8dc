import csv
import io
from decimal import Decimal
from fractions import Fraction
from itertools import combinations
from math import comb

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jje.analysis import (
    CSV_HEADER,
    corrupted_count,
    emit_figure2_data,
    exact_corruption_probability,
    lemma4_bound,
    param_point,
    search_parameters,
)
from jje.errors import InvalidParameter

N6 = 10**6


def binomial_by_integers(N, C, D, t):
    """Second route: integer numerators over N^D, via the complement."""
    below = sum(comb(D, i) * C**i * (N - C) ** (D - i) for i in range(t))
    return 1 - Fraction(below, N**D)


def hypergeometric_by_enumeration(N, C, D, t):
    corrupted = set(range(C))
    hits = total = 0
    for chosen in combinations(range(N), D):
        total += 1
        hits += len(corrupted.intersection(chosen)) >= t
    return Fraction(hits, total)


def test_trivial_cases():
    assert exact_corruption_probability(100, 0, 6, 4) == 0
    assert exact_corruption_probability(100, 100, 6, 4) == 1
    assert exact_corruption_probability(100, 100, 6, 4, "hypergeometric") == 1
    assert exact_corruption_probability(100, 3, 6, 4, "hypergeometric") == 0


def test_headline_bounds():
    p35 = exact_corruption_probability(N6, 350_000, 18, 12)
    p15 = exact_corruption_probability(N6, 150_000, 18, 12)
    assert p35 < Fraction(1, 100)
    assert p15 < Fraction(1, 10**6)


def test_headline_values_pinned():
    # the binomial sums have denominators 2^a 5^b, so the decimals terminate
    assert exact_corruption_probability(N6, 350_000, 18, 12) == Fraction(Decimal("0.006169032869329897062164306640625"))
    assert exact_corruption_probability(N6, 150_000, 18, 12) == Fraction(Decimal("0.000000987284289607283111572265625"))
    hyp = exact_corruption_probability(N6, 350_000, 18, 12, "hypergeometric")
    assert abs(float(hyp) - 0.006168623291215745465805) < 1e-18


@pytest.mark.parametrize("C", [0, 1, 150_000, 350_000, 999_999, N6])
def test_binomial_matches_integer_route(C):
    for D, t in ((18, 12), (10, 7), (6, 1)):
        assert exact_corruption_probability(N6, C, D, t) == binomial_by_integers(N6, C, D, t)


@pytest.mark.parametrize("N", [6, 9, 12])
def test_hypergeometric_matches_enumeration(N):
    for C in range(N + 1):
        for D in (3, 5):
            for t in range(1, D + 1):
                assert exact_corruption_probability(N, C, D, t, "hypergeometric") == \
                    hypergeometric_by_enumeration(N, C, D, t)


def test_lemma4_equals_full_threshold():
    assert lemma4_bound(1000, 500, 10) == Fraction(1, 2**10)
    assert lemma4_bound(1000, 0, 10) == 0
    for C in range(0, 1001, 50):
        for D in (1, 4, 10, 18):
            assert lemma4_bound(1000, C, D) == exact_corruption_probability(1000, C, D, D)


@settings(max_examples=80, deadline=None)
@given(st.integers(20, 500), st.data())
def test_monotone(N, data):
    D = data.draw(st.integers(1, min(N, 20)))
    t = data.draw(st.integers(1, D))
    C = data.draw(st.integers(0, N - 1))
    for model in ("binomial", "hypergeometric"):
        p = exact_corruption_probability(N, C, D, t, model)
        assert 0 <= p <= 1
        assert exact_corruption_probability(N, C + 1, D, t, model) >= p
        if t < D:
            assert exact_corruption_probability(N, C, D, t + 1, model) <= p


def test_models_converge():
    for f in (0.15, 0.25, 0.35, 0.5):
        C = corrupted_count(N6, f)
        gap = exact_corruption_probability(N6, C, 18, 12) - exact_corruption_probability(N6, C, 18, 12, "hypergeometric")
        assert abs(gap) <= Fraction(1, 10**4)


@pytest.mark.parametrize(
    "args", [(10, 11, 3, 2), (10, -1, 3, 2), (10, 5, 3, 4), (10, 5, 11, 2), (10, 5, 3, 0)]
)
def test_invalid_parameters(args):
    with pytest.raises(InvalidParameter):
        exact_corruption_probability(*args)


def test_unknown_model():
    with pytest.raises(InvalidParameter):
        exact_corruption_probability(10, 5, 3, 2, "poisson")


def test_param_point():
    pt = param_point(100, 35, 6, 4)
    assert pt.p == exact_corruption_probability(100, 35, 6, 4)
    assert pt.p_float == float(pt.p)


def test_corrupted_count():
    assert corrupted_count(N6, 0.35) == 350_000
    assert corrupted_count(1000, 0.15) == 150
    assert corrupted_count(7, 1.0) == 7
    with pytest.raises(InvalidParameter):
        corrupted_count(10, 1.5)


# -- search -------------------------------------------------------------------------


def test_search_finds_feasible_minimum():
    C = 350_000
    D, t = search_parameters(N6, C, 0.01, 30)
    assert D <= 18
    assert exact_corruption_probability(N6, C, D, t) <= Fraction(1, 100)
    # nothing smaller works
    for d in range(1, D):
        assert all(exact_corruption_probability(N6, C, d, tt) > Fraction(1, 100) for tt in range(1, d + 1))
    for tt in range(1, t):
        assert exact_corruption_probability(N6, C, D, tt) > Fraction(1, 100)
    assert exact_corruption_probability(N6, C, 18, 12) <= Fraction(1, 100)


def test_search_trivial_target():
    assert search_parameters(N6, 350_000, 1.0, 5) == (1, 1)


def test_search_infeasible():
    C = corrupted_count(N6, 0.999)
    assert search_parameters(N6, C, 1e-9, 8) is None
    # exhaustive check of the same claim
    assert all(
        exact_corruption_probability(N6, C, D, t) > Fraction(1e-9)
        for D in range(1, 9) for t in range(1, D + 1)
    )


@pytest.mark.parametrize("target", [0, -0.1, 1.5])
def test_search_bad_target(target):
    with pytest.raises(InvalidParameter):
        search_parameters(100, 10, target, 5)


# -- CSV ------------------------------------------------------------------------------


def test_figure_csv():
    buf = io.StringIO()
    emit_figure2_data(out=buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == CSV_HEADER
    body = [(int(D), int(t), float(f), float(pb), float(ph)) for D, t, f, pb, ph in rows[1:]]
    assert {(D, t) for D, t, *_ in body} >= {(18, 12)}
    for D, t, f, pb, ph in body:
        if f == 0:
            assert pb == ph == 0
        if f == 1:
            assert pb == ph == 1
        if (D, t, f) == (18, 12, 0.35):
            assert pb < 0.01 and ph < 0.01
    for pair in {(D, t) for D, t, *_ in body}:
        series = [r for r in body if r[:2] == pair]
        assert [r[2] for r in series] == sorted(r[2] for r in series)
        for a, b in zip(series, series[1:]):
            assert b[3] >= a[3] and b[4] >= a[4]
