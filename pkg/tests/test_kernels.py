"""Exactness of the compiled samplers against closed-form laws."""

import numpy as np
import pytest
from scipy import stats

from bprelab import _kernels as K
from bprelab.offspring import LawTable, finite, geometric_shifted, poisson, power_tail
from bprelab.rng import Stream

P_FLOOR = 1e-4


def draws(fn, count, seed, *args):
    s = Stream(seed).state
    return np.array([fn(s, *args) for _ in range(count)], dtype=np.int64)


def chi2_pvalue(sample, pmf, support):
    """Pearson test with cells pooled until each expects at least 5 counts."""
    n = sample.size
    probs = np.array([pmf(k) for k in support])
    counts = np.array([np.sum(sample == k) for k in support], dtype=float)
    rest_p = max(1.0 - probs.sum(), 0.0)
    rest_c = n - counts.sum()
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, p in zip(counts, probs):
        acc_o += o
        acc_e += n * p
        if acc_e >= 5:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    acc_o += rest_c
    acc_e += n * rest_p
    obs[-1] += acc_o
    exp[-1] += acc_e
    return stats.chisquare(obs, exp).pvalue


@pytest.mark.parametrize("mu", [0.3, 4.0, 25.0, 600.0])
def test_poisson_exact(mu):
    x = draws(K.poisson, 20_000, 11, mu)
    lo, hi = stats.poisson.ppf([1e-6, 1 - 1e-6], mu)
    assert chi2_pvalue(x, lambda k: stats.poisson.pmf(k, mu), range(int(lo), int(hi) + 1)) > P_FLOOR


@pytest.mark.parametrize("n,p", [(20, 0.1), (7, 0.9), (400, 0.3), (5000, 0.62), (3, 0.5)])
def test_binomial_exact(n, p):
    x = draws(K.binomial, 20_000, 12, np.int64(n), p)
    assert x.min() >= 0 and x.max() <= n
    assert chi2_pvalue(x, lambda k: stats.binom.pmf(k, n, p), range(n + 1)) > P_FLOOR


def test_binomial_edge_cases():
    s = Stream(0).state
    assert K.binomial(s, np.int64(0), 0.4) == 0
    assert K.binomial(s, np.int64(9), 0.0) == 0
    assert K.binomial(s, np.int64(9), 1.0) == 9


def test_binomial_huge_count_moments():
    # the order-statistic splitting path
    n, p = 1 << 50, 0.3
    x = draws(K.binomial, 2000, 13, np.int64(n), p).astype(float)
    sd = np.sqrt(n * p * (1 - p))
    z = (x.mean() - n * p) / (sd / np.sqrt(x.size))
    assert abs(z) < 4
    assert abs(x.std() / sd - 1) < 0.08


def test_poisson_huge_mean_moments():
    mu = 3.0e15
    x = draws(K.poisson, 2000, 14, mu).astype(float)
    z = (x.mean() - mu) / np.sqrt(mu / x.size)
    assert abs(z) < 4
    assert abs(x.std() / np.sqrt(mu) - 1) < 0.08


@pytest.mark.parametrize("shape", [0.4, 1.0, 7.5])
def test_gamma_ks(shape):
    s = Stream(15).state
    x = np.array([K.gamma(s, shape) for _ in range(10_000)])
    assert stats.kstest(x, stats.gamma(shape).cdf).pvalue > P_FLOOR


def test_beta_ks():
    s = Stream(16).state
    x = np.array([K.beta(s, 2.5, 0.7) for _ in range(10_000)])
    assert stats.kstest(x, stats.beta(2.5, 0.7).cdf).pvalue > P_FLOOR


def test_normal_ks():
    s = Stream(17).state
    x = np.array([K.normal(s) for _ in range(10_000)])
    assert stats.kstest(x, "norm").pvalue > P_FLOOR


@pytest.mark.parametrize("n,p", [(5, 0.01), (40, 0.02), (3, 0.7), (100, 0.2)])
def test_binomial_positive_is_zero_truncated(n, p):
    x = draws(K._binomial_positive, 20_000, 18, np.int64(n), p)
    assert x.min() >= 1
    mass = 1 - stats.binom.pmf(0, n, p)
    assert chi2_pvalue(x, lambda k: stats.binom.pmf(k, n, p) / mass, range(1, n + 1)) > P_FLOOR


def test_tail_search_finds_last_index_above():
    tail = np.array([1.0, 0.6, 0.5, 0.5, 0.2, 0.1, 0.05, 0.0])
    for x in [0.55, 0.5, 0.3, 0.15, 0.07, 0.01]:
        want = max(i for i in range(7) if tail[i] > x)
        assert K._tail_search(tail, 0, 7, x) == want


def _totals(law, z, count, seed):
    fam, par, lo, hi, fvals, ftail, fcond = LawTable([law]).block(0)
    return K.totals_many(np.uint64(seed), fam, par, lo, hi, fvals, ftail, fcond,
                         np.int64(z), count, np.int64(1 << 62))


def test_finite_total_matches_exact_convolution():
    law = finite({0: 0.2, 1: 0.1, 2: 0.4, 5: 0.3})
    z = 6
    single = np.zeros(6)
    for v, p in zip(law.values, law.probs):
        single[v] = p
    conv = np.array([1.0])
    for _ in range(z):
        conv = np.convolve(conv, single)
    x = _totals(law, z, 40_000, 19)
    assert chi2_pvalue(x, lambda k: conv[k] if k < conv.size else 0.0, range(conv.size)) > P_FLOOR


def test_poisson_total_law():
    x = _totals(poisson(1.5), 8, 20_000, 20)
    assert chi2_pvalue(x, lambda k: stats.poisson.pmf(k, 12.0), range(60)) > P_FLOOR


def test_geometric_total_is_shifted_negative_binomial():
    s, z = 0.4, 5
    x = _totals(geometric_shifted(s), z, 20_000, 21)
    assert x.min() >= z
    pmf = lambda k: stats.nbinom.pmf(k - z, z, 1 - s)
    assert chi2_pvalue(x, pmf, range(z, z + 60)) > P_FLOOR


def test_sparse_power_tail_total_mean():
    # the sparse-jump branch dominates here
    law = power_tail(2.5, 10_000)
    z = 50_000
    x = _totals(law, z, 400, 22).astype(float)
    sd = np.sqrt(z * (law._m2 - law.mean ** 2))
    assert abs(x.mean() - z * law.mean) < 4 * sd / np.sqrt(x.size)


def test_totals_agree_with_naive_sums():
    law = power_tail(1.8, 200)
    fam, par, lo, hi, fvals, ftail, fcond = LawTable([law]).block(0)
    z = 30
    a = _totals(law, z, 5000, 23)
    b = K.naive_many(np.uint64(24), fam, par, lo, hi, fvals, ftail, z, 5000)
    assert stats.ks_2samp(a, b).pvalue > P_FLOOR


def test_total_overflow_signals():
    law = finite({1: 0.5, 1000: 0.5})
    fam, par, lo, hi, fvals, ftail, fcond = LawTable([law]).block(0)
    out = K.totals_many(np.uint64(1), fam, par, lo, hi, fvals, ftail, fcond,
                        np.int64(1000), 5, np.int64(10_000))
    assert np.all(out == -1)
