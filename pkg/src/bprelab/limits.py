"""Limit objects of the normalized population W_n = Z_n / P_n.

Deterministic quantities (log P_n, the quenched variance series and its
tails, the quenched moment generating function, extinction probabilities)
are computed from a realized environment; the law of G * sqrt(W) is
represented by a Monte Carlo sample.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .env import EnvironmentModel, realize, shift
from .errors import DegenerateEnvironment, DivergenceSuspected, DivergentSeries
from .offspring import moment, pgf, pgf_excess_ratio, pgf_radius

REL_STOP = 1e-12
STOP_RUN = 5
MAX_TERMS = 10_000
DIVERGENCE_RUN = 50
MAX_MGF_DEPTH = 1000


def compensated_cumsum(x):
    """Prefix sums with Neumaier compensation; out[0] = 0."""
    out = np.empty(len(x) + 1)
    total = 0.0
    comp = 0.0
    out[0] = 0.0
    for k, v in enumerate(x):
        v = float(v)
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[k + 1] = total + comp
    return out


def log_Pn(env, n):
    """log P_n = sum of log m_i for i < n, with exactly rounded summation."""
    n = int(n)
    if n < 0 or n > len(env):
        raise IndexError(f"n={n} outside [0, {len(env)}]")
    return math.fsum(env.log_means()[:n])


def log_P_prefix(env, n=None):
    """Array (log P_0, ..., log P_n)."""
    if n is None:
        n = len(env)
    return compensated_cumsum(env.log_means()[:n])


def variance_ratios(palette):
    """m(2)/m**2 - 1 for each law, clipped at zero against rounding."""
    return np.array([max(moment(law, 2) / law.mean ** 2 - 1.0, 0.0) for law in palette])


@dataclass
class VarianceSeries:
    """Partial sums of the quenched variance series of W.

    ``terms[k]`` is (m_k(2)/m_k**2 - 1) / P_k and ``partials[k]`` the sum of
    terms 0..k.
    """

    terms: np.ndarray
    partials: np.ndarray
    converged: bool
    truncation_index: int
    degenerate: bool

    @property
    def value(self):
        return float(self.partials[-1])

    def tail_from(self, n):
        """Sum of terms with index >= n, summed afresh from index n."""
        return math.fsum(self.terms[n:])


def delta2_partial(env, n_terms=None):
    """Partial sums of the variance series over the first ``n_terms`` generations.

    The series is flagged converged once five consecutive terms are each
    below 1e-12 of the running sum. A sustained run of 50 non-decaying terms
    raises DivergenceSuspected.
    """
    if n_terms is None:
        n_terms = min(len(env), MAX_TERMS)
    n_terms = int(n_terms)
    if n_terms < 1 or n_terms > len(env):
        raise IndexError(f"n_terms={n_terms} outside [1, {len(env)}]")
    ratios = variance_ratios(env.palette)[env.index[:n_terms]]
    logp = log_P_prefix(env, n_terms)[:n_terms]
    terms = ratios * np.exp(-logp)
    partials = compensated_cumsum(terms)[1:]
    degenerate = not np.any(terms > 0.0)
    if degenerate:
        return VarianceSeries(terms, partials, True, 0, True)
    run = 0
    grow = 0
    trunc = -1
    for k in range(1, n_terms):
        if terms[k] < REL_STOP * partials[k]:
            run += 1
            if run >= STOP_RUN and trunc < 0:
                trunc = k
        else:
            run = 0
        if terms[k - 1] > 0.0 and terms[k] >= terms[k - 1]:
            grow += 1
            if grow >= DIVERGENCE_RUN:
                raise DivergenceSuspected(
                    f"variance series terms stopped decaying by index {k}")
        else:
            grow = 0
    return VarianceSeries(terms, partials, trunc >= 0, trunc if trunc >= 0 else n_terms - 1, False)


def delta2(source, horizon=2000, env_seed=0):
    """Value of the variance series for a sequence or a model realization."""
    if isinstance(source, EnvironmentModel):
        source = realize(source, horizon, env_seed)
    return delta2_partial(source).value


def delta2_shifted(env, n):
    """delta_inf(T^n xi): square root of the variance series of the shifted environment."""
    series = delta2_partial(shift(env, n))
    if series.degenerate or series.value <= 0.0:
        raise DegenerateEnvironment(
            "variance series vanishes: every law from this generation on is a point mass")
    return math.sqrt(series.value)


def delta2_shifted_via_tail(env, n):
    """Same quantity from the unshifted series: sqrt(P_n * tail_from(n))."""
    series = delta2_partial(env)
    tail = series.tail_from(n)
    if tail <= 0.0:
        raise DegenerateEnvironment("variance series tail vanishes")
    return math.sqrt(math.exp(log_Pn(env, n)) * tail)


def delta2_shifted_rows(palette, states, n):
    """delta_inf(T^n xi) for every row of a matrix of law indices."""
    logm = np.array([math.log(law.mean) for law in palette])
    ratios = variance_ratios(palette)
    sub = states[:, n:]
    lp = np.cumsum(logm[sub], axis=1)
    lp = np.concatenate([np.zeros((sub.shape[0], 1)), lp[:, :-1]], axis=1)
    d2 = np.sum(ratios[sub] * np.exp(-lp), axis=1)
    if np.any(d2 <= 0.0):
        raise DegenerateEnvironment("variance series vanishes for some environment")
    return np.sqrt(d2)


def u_statistic(env, n, w_n, w_hat):
    """sqrt(P_n) (w_hat - w_n) / delta_inf(T^n xi); vectorizes over the w arrays."""
    d = delta2_shifted(env, n)
    return math.exp(0.5 * log_Pn(env, n)) * (np.asarray(w_hat) - np.asarray(w_n)) / d


@dataclass
class LimitEstimate:
    kind: str
    value: object
    std_error: object = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        v = self.value
        if isinstance(v, np.ndarray):
            v = v.tolist()
        return {"kind": self.kind, "value": v, "std_error": self.std_error, "meta": self.meta}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def limit_law_sample(source, reps, depth, seed, mode="quenched", env_seed=0):
    """Sorted sample of G * sqrt(W_depth) with G standard normal.

    In quenched mode ``source`` is a realized environment (a model is
    realized once with ``env_seed``); in annealed mode each replicate draws
    its own environment from the model.
    """
    if reps < 1 or depth < 1:
        raise ValueError("reps and depth must be positive")
    batch = engine.run_replicates(source, depth, [depth], reps, seed, mode=mode,
                                  env_seed=env_seed, draw_normal=True)
    w = batch.w[:, 0]
    sample = np.sort(batch.gauss * np.sqrt(w))
    return LimitEstimate("Phi2Sample", sample, None, {
        "seed": int(seed), "env_seed": int(env_seed), "depth": int(depth),
        "reps": int(reps), "mode": mode,
    })


def quenched_mgf(env, t, n):
    """E_xi exp(t W_n) through the generating-function recursion.

    Unrolled, psi_n(t) = phi_0(phi_1(...phi_{n-1}(exp(t / P_n)))). The
    composition runs on log(s - 1), since exp(t / P_n) rounds to 1 once P_n
    is large. Raises DivergentSeries when an argument leaves a radius of
    convergence or the value overflows (overflow is reported as
    divergence, though for laws with an entire generating function the true
    value is finite).
    """
    t = float(t)
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = min(int(n), MAX_MGF_DEPTH)
    if n > len(env):
        raise IndexError(f"n={n} exceeds environment length {len(env)}")
    if t == 0.0:
        return 1.0
    x = t * math.exp(-log_Pn(env, n))
    if x > 1e-8:
        v = math.log(math.expm1(x))
    else:
        v = math.log(t) - log_Pn(env, n) + math.log1p(0.5 * x)
    for k in range(n - 1, -1, -1):
        u = math.exp(v) if v < 709.0 else math.inf
        r = pgf_excess_ratio(env[k], u) if math.isfinite(u) else math.inf
        if not math.isfinite(r):
            if math.isfinite(u) and 1.0 + u < pgf_radius(env[k]):
                # finite in exact arithmetic but past double range
                raise DivergentSeries(f"generating function overflows at generation {k}; "
                                      "reported as divergence")
            raise DivergentSeries(f"generating function diverges at generation {k}")
        v += math.log(r)
    if v >= 709.0:
        raise DivergentSeries("moment generating function overflows")
    return 1.0 + math.exp(v)


def classify_mgf(env, t, n_cap=MAX_MGF_DEPTH, rtol=1e-9, window=5):
    """Classify psi_n(t) as 'stable', 'divergent' or 'unresolved' up to n_cap.

    Returns (label, value) where value is psi_{n_cap}(t) when finite.
    Since psi_n(t) is nondecreasing in n, divergence at n_cap means
    divergence from some n on.
    """
    n_cap = min(int(n_cap), MAX_MGF_DEPTH, len(env))
    try:
        top = quenched_mgf(env, t, n_cap)
    except DivergentSeries:
        return "divergent", math.inf
    lower = quenched_mgf(env, t, max(n_cap - window, 0))
    if abs(top - lower) <= rtol * top:
        return "stable", top
    return "unresolved", top


def mgf_radius(env, t_max, n_cap=MAX_MGF_DEPTH, tol=1e-6):
    """Bracket [t_ok, t_div] of the exponential-moment radius by bisection.

    Splits on divergence of the recursion by n_cap: t_ok is the largest
    point found with psi_{n_cap}(t) finite, t_div the smallest divergent
    one. Points that are finite but not yet settled ("unresolved", typical
    just below the radius where rounding grows like psi) count as finite.
    Returns (t_max, inf) when t_max itself does not diverge.
    """
    lo, hi = 0.0, float(t_max)
    label, _ = classify_mgf(env, hi, n_cap)
    if label != "divergent":
        return hi, math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        label, _ = classify_mgf(env, mid, n_cap)
        if label == "divergent":
            hi = mid
        else:
            lo = mid
    return lo, hi


def _compose_at_zero(env, depth):
    x = 0.0
    for k in range(depth - 1, -1, -1):
        x = pgf(env[k], x)
    return x


def extinction_prob(env, depth):
    """P_xi(Z_depth = 0) = phi_0(...phi_{depth-1}(0)), by backward composition.

    The increment over depth - 1 is reported as an error estimate.
    """
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be positive")
    if depth > len(env):
        raise IndexError(f"depth={depth} exceeds environment length {len(env)}")
    q = _compose_at_zero(env, depth)
    prev = _compose_at_zero(env, depth - 1)
    return LimitEstimate("ExtinctionProb", q, abs(q - prev),
                         {"depth": depth, "last_increment": q - prev})
