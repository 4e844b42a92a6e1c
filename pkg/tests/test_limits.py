import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize, stats

from bprelab import limits
from bprelab.env import EnvironmentModel, constant_env, realize
from bprelab.errors import DegenerateEnvironment, DivergenceSuspected, DivergentSeries
from bprelab.offspring import finite, geometric_shifted, poisson

MARKOV = EnvironmentModel.markov([poisson(2.0), geometric_shifted(0.4), finite({1: 0.5, 4: 0.5})],
                                 [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]])


@given(st.floats(1.2, 20.0))
def test_delta2_poisson_closed_form(lam):
    # terms (1/lam) lam**-k sum to 1/(lam - 1)
    assert limits.delta2(constant_env(poisson(lam), 4000)) == pytest.approx(1 / (lam - 1), rel=1e-10)


@given(st.floats(0.05, 0.95))
def test_delta2_geometric_is_one(s):
    assert limits.delta2(constant_env(geometric_shifted(s), 4000)) == pytest.approx(1.0, rel=1e-10)


def test_series_converges_and_flags():
    series = limits.delta2_partial(constant_env(poisson(2.0), 200))
    assert series.converged and not series.degenerate
    assert series.tail_from(0) == pytest.approx(series.value)
    assert series.tail_from(3) == pytest.approx(0.5 * 2.0 ** -3 / (1 - 0.5), rel=1e-12)
    unit = limits.delta2_partial(constant_env(finite({2: 1.0}), 50))
    assert unit.degenerate and unit.value == 0.0


def test_divergence_suspected_when_subcritical():
    with pytest.raises(DivergenceSuspected):
        limits.delta2_partial(constant_env(poisson(0.9), 200))


def test_log_pn_exact():
    env = constant_env(poisson(3.0), 100)
    assert limits.log_Pn(env, 100) == pytest.approx(100 * math.log(3.0), rel=1e-15)
    assert limits.log_Pn(env, 0) == 0.0


@pytest.mark.parametrize("n", [0, 3, 17, 60])
def test_shifted_delta_three_routes(n):
    env = realize(MARKOV, 600, 11)
    direct = limits.delta2_shifted(env, n)
    via_tail = limits.delta2_shifted_via_tail(env, n)
    rows = limits.delta2_shifted_rows(env.palette, env.index[None, :], n)[0]
    assert via_tail == pytest.approx(direct, rel=1e-9)
    assert rows == pytest.approx(direct, rel=1e-9)


def test_shifted_delta_degenerate():
    env = realize(EnvironmentModel.deterministic([poisson(2.0), finite({2: 1.0})]), 50)
    with pytest.raises(DegenerateEnvironment):
        limits.delta2_shifted(env, 3)


def geometric_mgf(t, n):
    p = 2.0 ** -n
    lam = t / 2.0 ** n
    # 1 - (1 - p) e**lam written without cancellation
    return p * math.exp(lam) / (p * math.exp(lam) - math.expm1(lam))


@pytest.mark.parametrize("n", [1, 5, 20, 60, 200])
@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_mgf_geometric_closed_form(n, t):
    # Z_n is geometric on {1, 2, ...} with success probability 2**-n
    env = constant_env(geometric_shifted(0.5), 300)
    assert limits.quenched_mgf(env, t, n) == pytest.approx(geometric_mgf(t, n), rel=1e-9)


def test_mgf_limit_and_divergence():
    env = constant_env(geometric_shifted(0.5), 1000)
    assert limits.quenched_mgf(env, 0.5, 1000) == pytest.approx(2.0, rel=1e-9)
    with pytest.raises(DivergentSeries):
        limits.quenched_mgf(env, 1.5, 50)
    label, _ = limits.classify_mgf(env, 1.2, 200)
    assert label == "divergent"
    label, val = limits.classify_mgf(env, 0.5, 200)
    assert label == "stable" and val == pytest.approx(2.0)
    lo, hi = limits.mgf_radius(env, 2.0, 400, tol=1e-3)
    assert lo < 1.0 + 1e-3 and hi > 0.99


def test_mgf_poisson_matches_monte_carlo_exactly_small_n():
    # two generations: E exp(t Z_2 / 4) for Poisson(2), summed over Z_1
    env = constant_env(poisson(2.0), 5)
    t = 0.7
    want = 0.0
    for k in range(80):
        want += stats.poisson.pmf(k, 2.0) * math.exp(2.0 * k * (math.exp(t / 4) - 1))
    assert limits.quenched_mgf(env, t, 2) == pytest.approx(want, rel=1e-12)


def test_extinction_probabilities():
    q_ref = optimize.brentq(lambda q: math.exp(2 * (q - 1)) - q, 0.0, 0.9)
    est = limits.extinction_prob(constant_env(poisson(2.0), 200), 200)
    assert est.value == pytest.approx(q_ref, abs=1e-12)
    assert est.value == pytest.approx(0.2031878699, abs=1e-10)
    est = limits.extinction_prob(constant_env(finite({0: 0.25, 2: 0.75}), 200), 200)
    assert est.value == pytest.approx(1 / 3, abs=1e-12)
    est = limits.extinction_prob(constant_env(geometric_shifted(0.5), 10), 10)
    assert est.value == 0.0


def test_limit_sample_geometric_is_laplace():
    # W is Exp(1), so G sqrt(W) is Laplace with scale 1/sqrt(2)
    env = constant_env(geometric_shifted(0.5), 40)
    est = limits.limit_law_sample(env, 20_000, 30, seed=5)
    x = est.value
    assert np.all(np.diff(x) >= 0)
    assert stats.kstest(x, stats.laplace(scale=1 / math.sqrt(2)).cdf).pvalue > 1e-4


def test_u_statistic_scaling():
    env = constant_env(poisson(2.0), 300)
    u = limits.u_statistic(env, 4, np.array([1.0]), np.array([1.5]))
    assert u[0] == pytest.approx(4.0 * 0.5 / math.sqrt(1.0), rel=1e-12)


def test_limit_estimate_json():
    est = limits.extinction_prob(constant_env(poisson(2.0), 20), 20)
    d = est.to_dict()
    assert d["kind"] == "ExtinctionProb" and d["meta"]["depth"] == 20
    assert '"ExtinctionProb"' in est.to_json()


def test_mgf_radius_brackets_one_for_geometric():
    env = constant_env(geometric_shifted(0.5), 1000)
    lo, hi = limits.mgf_radius(env, 2.0, 1000, tol=1e-6)
    assert lo <= 1.0 <= hi and hi - lo <= 1e-6


def test_mgf_base_cases():
    env = constant_env(poisson(2.0), 10)
    assert limits.quenched_mgf(env, 0.7, 0) == pytest.approx(math.exp(0.7), rel=1e-14)
    assert limits.quenched_mgf(env, 0.7, 1) == pytest.approx(math.exp(2 * (math.exp(0.35) - 1)), rel=1e-13)
    unit = constant_env(finite({1: 1.0}), 50)
    assert limits.quenched_mgf(unit, 3.0, 50) == pytest.approx(math.exp(3.0), rel=1e-12)


def test_mgf_overflow_is_labelled():
    env = constant_env(poisson(2.0), 300)
    with pytest.raises(DivergentSeries, match="overflows"):
        limits.quenched_mgf(env, 4.0, 200)
    with pytest.raises(DivergentSeries, match="diverges"):
        limits.quenched_mgf(constant_env(geometric_shifted(0.5), 300), 1.5, 200)
