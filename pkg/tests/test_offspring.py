import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bprelab.errors import DivergentSeries, InvalidLaw, PopulationOverflow
from bprelab.offspring import (
    finite, geometric_shifted, law_from_spec, moment, pgf,
    pgf_excess_ratio, pgf_radius, poisson, power_tail, sample_one, sample_total,
)
from bprelab.rng import Stream

pmf_pairs = st.dictionaries(st.integers(0, 30), st.floats(0.01, 1.0), min_size=1, max_size=6)


def normalized(d):
    tot = sum(d.values())
    return {k: v / tot for k, v in d.items()}


def test_bad_laws_rejected():
    with pytest.raises(InvalidLaw):
        poisson(0.0)
    with pytest.raises(InvalidLaw):
        poisson(float("inf"))
    with pytest.raises(InvalidLaw):
        geometric_shifted(1.0)
    with pytest.raises(InvalidLaw):
        finite({0: 0.5, 1: 0.2})
    with pytest.raises(InvalidLaw):
        finite({-1: 1.0})
    with pytest.raises(InvalidLaw):
        finite({1.5: 1.0})
    with pytest.raises(InvalidLaw):
        finite({0: 1.0})
    with pytest.raises(InvalidLaw):
        finite([])
    with pytest.raises(InvalidLaw):
        power_tail(1.0, 10)


def test_tiny_deviation_is_renormalized():
    law = finite({1: 0.5, 2: 0.5 + 1e-11})
    assert math.fsum(law.probs) == pytest.approx(1.0, abs=1e-15)


def test_immutable():
    law = poisson(2.0)
    with pytest.raises(AttributeError):
        law.param = 3.0


def test_closed_form_moments():
    assert moment(poisson(2.0), 2) == pytest.approx(6.0)
    g = geometric_shifted(0.5)
    assert g.mean == pytest.approx(2.0)
    assert moment(g, 2) == pytest.approx(6.0)
    # third moments through the series path
    assert moment(poisson(2.0), 3) == pytest.approx(2 + 3 * 4 + 8, rel=1e-10)
    s = 0.3
    m3 = stats.geom(1 - s).moment(3)
    assert moment(geometric_shifted(s), 3) == pytest.approx(m3, rel=1e-10)


def test_power_tail_normalization_and_mean():
    law = power_tail(2.5, 1000)
    k = np.arange(1, 1001, dtype=float)
    w = k ** -2.5
    assert law.mean == pytest.approx(np.dot(k, w) / w.sum(), rel=1e-12)
    assert law.p0_zero


def test_flags():
    assert not poisson(1.5).p0_zero
    assert geometric_shifted(0.2).p0_zero
    assert finite({2: 1.0}).degenerate
    assert not finite({1: 0.5, 2: 0.5}).degenerate


def test_pgf_values():
    assert pgf(poisson(2.0), 0.0) == pytest.approx(math.exp(-2))
    assert pgf(geometric_shifted(0.5), 1.5) == pytest.approx(0.5 * 1.5 / 0.25)
    with pytest.raises(DivergentSeries):
        pgf(geometric_shifted(0.5), 2.0)
    assert pgf_radius(geometric_shifted(0.25)) == 4.0
    assert pgf(finite({0: 0.25, 2: 0.75}), 0.5) == pytest.approx(0.25 + 0.75 * 0.25)


@pytest.mark.parametrize("law", [poisson(1.7), geometric_shifted(0.4),
                                 finite({0: 0.1, 1: 0.3, 4: 0.6})])
@pytest.mark.parametrize("u", [1e-3, 0.2, 0.9])
def test_excess_ratio_agrees_with_pgf(law, u):
    assert pgf_excess_ratio(law, u) == pytest.approx((pgf(law, 1 + u) - 1) / u, rel=1e-9)


def test_excess_ratio_small_argument_tends_to_mean():
    for law in [poisson(1.7), geometric_shifted(0.4), power_tail(2.5, 100)]:
        assert pgf_excess_ratio(law, 1e-14) == pytest.approx(law.mean, rel=1e-9)
        assert pgf_excess_ratio(law, 0.0) == law.mean
    assert pgf_excess_ratio(geometric_shifted(0.5), 1.5) == math.inf


@given(pmf_pairs)
def test_finite_law_invariants(d):
    d = normalized(d)
    if sum(k * p for k, p in d.items()) <= 0:
        return
    law = finite(d)
    assert law.mean == pytest.approx(sum(k * p for k, p in d.items()))
    assert moment(law, 2) >= law.mean ** 2 * (1 - 1e-12)
    assert pgf(law, 1.0) == 1.0
    assert law_from_spec(law.to_spec()) == law
    assert law.p0_zero == (d.get(0, 0.0) == 0.0)


@given(st.floats(0.05, 30.0), st.floats(0.01, 0.99))
def test_spec_round_trip(lam, s):
    for law in (poisson(lam), geometric_shifted(s)):
        assert law_from_spec(law.to_spec()) == law
    pt = power_tail(2.2, 50)
    assert law_from_spec(pt.to_spec()) == pt


def test_law_from_spec_errors():
    with pytest.raises(InvalidLaw, match="lamda"):
        law_from_spec({"family": "poisson", "lamda": 2})
    with pytest.raises(InvalidLaw, match="lambda"):
        law_from_spec({"family": "poisson"})
    with pytest.raises(InvalidLaw):
        law_from_spec({"family": "zeta"})


def test_sample_one_distribution():
    law = finite({0: 0.2, 3: 0.5, 7: 0.3})
    rng = Stream(5)
    x = np.array([sample_one(law, rng) for _ in range(20_000)])
    obs = [np.sum(x == v) for v in (0, 3, 7)]
    assert sum(obs) == x.size
    assert stats.chisquare(obs, [4000, 10_000, 6000]).pvalue > 1e-4


def test_sample_total_reproducible_and_zero():
    law = poisson(2.0)
    a = sample_total(law, 1000, Stream(3))
    b = sample_total(law, 1000, Stream(3))
    assert a == b
    assert sample_total(law, 0, Stream(3)) == 0


def test_overflow_raises():
    with pytest.raises(PopulationOverflow):
        sample_total(finite({5: 1.0}), 1 << 61, Stream(0))
    with pytest.raises(PopulationOverflow):
        sample_total(poisson(3.0), 1000, Stream(0), cap=100)


def test_big_integer_totals():
    z = 1 << 70
    for law in (poisson(2.0), geometric_shifted(0.5)):
        out = sample_total(law, z, Stream(8), cap=1 << 80)
        assert isinstance(out, int)
        # relative fluctuations are of order 2**-35
        assert abs(out / (z * law.mean) - 1) < 1e-8
