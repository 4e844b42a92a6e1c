"""Offspring laws with exact moments, generating functions and samplers.

Three families are supported:

* ``poisson`` with mean ``lam``;
* ``geometric_shifted`` with parameter ``s``: P(k) = (1 - s) s**(k - 1) on k >= 1;
* ``finite``: an explicit probability mass function on nonnegative integers.

``power_tail(exponent, kmax)`` builds the finite law P(k) proportional to
k**(-exponent) on {1, ..., kmax}.
"""

import math

import numpy as np

from . import _kernels as K
from .errors import DivergentSeries, InvalidLaw, PopulationOverflow
from .rng import Stream

DEFAULT_CAP = 1 << 62
KERNEL_CAP = 1 << 62

SUM_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
SERIES_RTOL = 1e-14


class OffspringLaw:
    """One reproduction law. Immutable once built.

    Use the constructors :meth:`poisson`, :meth:`geometric_shifted`,
    :meth:`finite` and :func:`power_tail` rather than ``__init__``.
    """

    __slots__ = ("family", "param", "values", "probs", "_tail", "_cond",
                 "_mean", "_m2", "_origin", "_packed", "p0", "p0_zero", "degenerate")

    def __init__(self, family, param=0.0, values=None, probs=None, origin=None):
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "param", float(param))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_origin", origin)
        object.__setattr__(self, "_tail", None)
        object.__setattr__(self, "_cond", None)
        object.__setattr__(self, "_packed", None)
        if family == "poisson":
            p0 = math.exp(-self.param)
            mean = self.param
            m2 = self.param * (self.param + 1.0)
            degenerate = False
        elif family == "geometric_shifted":
            p0 = 0.0
            mean = 1.0 / (1.0 - self.param)
            m2 = (1.0 + self.param) / (1.0 - self.param) ** 2
            degenerate = False
        else:
            p0 = float(probs[values == 0].sum())
            vf = values.astype(float)
            mean = float(np.dot(vf, probs))
            m2 = float(np.dot(vf * vf, probs))
            degenerate = bool(np.any(probs == 1.0))
            # reverse cumulative sums keep small tail masses accurate
            tail = np.cumsum(probs[::-1])[::-1].copy()
            tail[0] = 1.0
            cond = np.minimum(probs / tail, 1.0)
            cond[-1] = 1.0
            object.__setattr__(self, "_tail", tail)
            object.__setattr__(self, "_cond", cond)
        if not (0.0 < mean < math.inf):
            raise InvalidLaw(f"mean must lie in (0, inf), got {mean}")
        object.__setattr__(self, "_mean", mean)
        object.__setattr__(self, "_m2", m2)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p0_zero", p0 == 0.0)
        object.__setattr__(self, "degenerate", degenerate)

    def __setattr__(self, name, value):
        raise AttributeError("OffspringLaw is immutable")

    # -- constructors -------------------------------------------------------

    @classmethod
    def poisson(cls, lam):
        lam = float(lam)
        if not (lam > 0.0 and math.isfinite(lam)):
            raise InvalidLaw(f"poisson mean must be positive and finite, got {lam}")
        return cls("poisson", lam)

    @classmethod
    def geometric_shifted(cls, s):
        s = float(s)
        if not 0.0 < s < 1.0:
            raise InvalidLaw(f"geometric_shifted parameter must lie in (0, 1), got {s}")
        return cls("geometric_shifted", s)

    @classmethod
    def finite(cls, pmf, origin=None):
        """Finite-support law from ``(value, probability)`` pairs or a mapping."""
        if isinstance(pmf, dict):
            pmf = list(pmf.items())
        if len(pmf) == 0:
            raise InvalidLaw("empty pmf")
        vals = []
        ps = []
        for item in pmf:
            try:
                v, p = item
            except (TypeError, ValueError):
                raise InvalidLaw(f"pmf entries must be (value, probability) pairs, got {item!r}")
            if int(v) != v or v < 0:
                raise InvalidLaw(f"support values must be nonnegative integers, got {v!r}")
            p = float(p)
            if not (p >= 0.0 and math.isfinite(p)):
                raise InvalidLaw(f"probabilities must be nonnegative, got {p!r}")
            vals.append(int(v))
            ps.append(p)
        values = np.asarray(vals, dtype=np.int64)
        probs = np.asarray(ps, dtype=np.float64)
        return cls._from_arrays(values, probs, origin)

    @classmethod
    def _from_arrays(cls, values, probs, origin=None):
        total = math.fsum(probs)
        dev = abs(total - 1.0)
        if dev > RENORMALIZE_TOL:
            raise InvalidLaw(f"probabilities sum to {total!r}; deviation {dev:.3g} too large to renormalize")
        if dev > SUM_TOL:
            probs = probs / total
        # merge duplicate values, drop empty atoms
        uniq, inv = np.unique(values, return_inverse=True)
        if uniq.size != values.size:
            merged = np.zeros(uniq.size)
            np.add.at(merged, inv, probs)
            values, probs = uniq, merged
        keep = probs > 0.0
        values, probs = values[keep], probs[keep]
        # decreasing probability, ties by value
        order = np.lexsort((values, -probs))
        return cls("finite", 0.0, values[order].copy(), probs[order].copy(), origin)

    # -- basic quantities ---------------------------------------------------

    @property
    def mean(self):
        return self._mean

    def __repr__(self):
        if self.family == "poisson":
            return f"Poisson({self.param:g})"
        if self.family == "geometric_shifted":
            return f"GeometricShifted({self.param:g})"
        if self._origin is not None:
            return f"PowerTail({self._origin['exponent']:g}, {self._origin['kmax']})"
        atoms = ", ".join(f"{v}:{p:g}" for v, p in sorted(zip(self.values.tolist(), self.probs.tolist()))[:6])
        more = ", ..." if self.values.size > 6 else ""
        return f"FiniteSupport({{{atoms}{more}}})"

    def _key(self):
        if self.family == "finite":
            if self._origin is not None:
                return ("power_tail", self._origin["exponent"], self._origin["kmax"])
            return ("finite", tuple(sorted(zip(self.values.tolist(), self.probs.tolist()))))
        return (self.family, self.param)

    def __eq__(self, other):
        return isinstance(other, OffspringLaw) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def pmf(self, k):
        """P(X = k)."""
        if self.family == "poisson":
            if k < 0:
                return 0.0
            return math.exp(-self.param + k * math.log(self.param) - math.lgamma(k + 1))
        if self.family == "geometric_shifted":
            if k < 1:
                return 0.0
            return (1.0 - self.param) * self.param ** (k - 1)
        return float(self.probs[self.values == k].sum())

    def to_spec(self):
        """JSON-ready description, the inverse of :func:`law_from_spec`."""
        if self.family == "poisson":
            return {"family": "poisson", "lambda": self.param}
        if self.family == "geometric_shifted":
            return {"family": "geometric_shifted", "s": self.param}
        if self._origin is not None:
            return {"family": "power_tail", **self._origin}
        pairs = sorted(zip(self.values.tolist(), self.probs.tolist()))
        return {"family": "finite", "pmf": [[v, p] for v, p in pairs]}


def poisson(lam):
    return OffspringLaw.poisson(lam)


def geometric_shifted(s):
    return OffspringLaw.geometric_shifted(s)


def finite(pmf):
    return OffspringLaw.finite(pmf)


def power_tail(exponent=2.5, kmax=1_000_000):
    """P(k) proportional to k**(-exponent) on {1, ..., kmax}, normalized exactly."""
    kmax = int(kmax)
    if kmax < 1:
        raise InvalidLaw("kmax must be at least 1")
    exponent = float(exponent)
    if not exponent > 1.0:
        raise InvalidLaw("power_tail exponent must exceed 1")
    k = np.arange(1, kmax + 1, dtype=np.int64)
    w = k.astype(float) ** (-exponent)
    # sum smallest terms first
    w = w / math.fsum(w[::-1])
    return OffspringLaw._from_arrays(k, w, origin={"exponent": exponent, "kmax": kmax})


def law_from_spec(spec):
    """Build a law from its JSON form, e.g. ``{"family": "poisson", "lambda": 2.0}``."""
    spec = dict(spec)
    family = spec.pop("family", None)
    allowed = {
        "poisson": {"lambda"},
        "geometric_shifted": {"s"},
        "finite": {"pmf"},
        "power_tail": {"exponent", "kmax"},
    }
    if family not in allowed:
        raise InvalidLaw(f"unknown law family {family!r}")
    extra = set(spec) - allowed[family]
    if extra:
        raise InvalidLaw(f"unknown key(s) for {family}: {', '.join(sorted(extra))}")
    missing = allowed[family] - set(spec) - ({"exponent", "kmax"} if family == "power_tail" else set())
    if missing:
        raise InvalidLaw(f"missing key(s) for {family}: {', '.join(sorted(missing))}")
    if family == "poisson":
        return OffspringLaw.poisson(spec["lambda"])
    if family == "geometric_shifted":
        return OffspringLaw.geometric_shifted(spec["s"])
    if family == "finite":
        return OffspringLaw.finite(spec["pmf"])
    return power_tail(spec.get("exponent", 2.5), spec.get("kmax", 1_000_000))


# -- moments and generating functions ----------------------------------------

def _series(term, start):
    """Sum term(k) for k >= start, stopping once a geometric tail bound is tiny.

    ``term`` must be eventually log-concave-decreasing, which holds for the
    Poisson and geometric moment series.
    """
    total = 0.0
    comp = []
    k = start
    prev = term(k)
    while True:
        comp.append(prev)
        total += prev
        nxt = term(k + 1)
        if prev > 0.0:
            ratio = nxt / prev
            if ratio < 1.0 and nxt * ratio / (1.0 - ratio) + nxt < SERIES_RTOL * total:
                comp.append(nxt)
                return math.fsum(comp)
        k += 1
        if k > 10_000_000:
            raise DivergentSeries("moment series failed to converge")
        prev = nxt


def moment(law, p):
    """Sum over i of i**p * P(i)."""
    p = float(p)
    if p < 1.0:
        raise ValueError("moment order must be at least 1")
    if law.family == "finite":
        vf = law.values.astype(float)
        return float(np.dot(vf ** p, law.probs))
    if p == 1.0:
        return law.mean
    if p == 2.0:
        return law._m2
    if law.family == "poisson":
        lam = law.param
        loglam = math.log(lam)
        return _series(lambda k: math.exp(p * math.log(k) + k * loglam - lam - math.lgamma(k + 1)), 1)
    s = law.param
    logs = math.log(s)
    return _series(lambda k: math.exp(p * math.log(k) + (k - 1) * logs) * (1.0 - s), 1)


def mean(law):
    return law.mean


def pgf(law, s):
    """Probability generating function at ``s`` (s > 1 allowed while finite).

    Raises DivergentSeries when the defining series diverges. For finite
    support the value may overflow to ``inf``.
    """
    s = float(s)
    if s < 0.0 or math.isnan(s):
        raise ValueError(f"pgf argument must be nonnegative, got {s}")
    if law.family == "poisson":
        x = law.param * (s - 1.0)
        if x > 709.0:
            return math.inf
        return math.exp(x)
    if law.family == "geometric_shifted":
        q = law.param
        if q * s >= 1.0:
            raise DivergentSeries(f"geometric pgf diverges at s={s} (radius {1.0 / q})")
        return (1.0 - q) * s / (1.0 - q * s)
    if s == 1.0:
        return 1.0
    with np.errstate(over="ignore"):
        return float(np.dot(law.probs, np.power(s, law.values.astype(float))))


def pgf_excess_ratio(law, u):
    """(phi(1 + u) - 1) / u, accurate for tiny ``u`` (the limit at 0 is the mean).

    Returns ``inf`` past the radius of convergence or on overflow.
    """
    u = float(u)
    if u < -1.0:
        raise ValueError("u must be at least -1")
    if u == 0.0:
        return law.mean
    if law.family == "poisson":
        x = law.param * u
        if x > 709.0:
            return math.inf
        return math.expm1(x) / u
    if law.family == "geometric_shifted":
        d = 1.0 - law.param * (1.0 + u)
        if d <= 0.0:
            return math.inf
        return 1.0 / d
    with np.errstate(over="ignore"):
        ex = np.expm1(law.values.astype(float) * math.log1p(u))
        val = float(np.dot(law.probs, ex)) / u
    return val if math.isfinite(val) else math.inf


def pgf_radius(law):
    """Radius of convergence of the generating function."""
    if law.family == "geometric_shifted":
        return 1.0 / law.param
    return math.inf


# -- packing for the compiled kernels ------------------------------------------

class LawTable:
    """Flat arrays describing a palette of laws for the compiled samplers."""

    def __init__(self, laws):
        laws = list(laws)
        if not laws:
            raise InvalidLaw("empty law palette")
        n = len(laws)
        self.laws = laws
        self.fam = np.zeros(n, dtype=np.int64)
        self.par = np.zeros(n, dtype=np.float64)
        self.off = np.zeros(n + 1, dtype=np.int64)
        self.logm = np.array([math.log(law.mean) for law in laws], dtype=np.float64)
        vals, tails, conds = [], [], []
        pos = 0
        for i, law in enumerate(laws):
            self.off[i] = pos
            if law.family == "poisson":
                self.fam[i] = K.FAM_POISSON
                self.par[i] = law.param
            elif law.family == "geometric_shifted":
                self.fam[i] = K.FAM_GEOMETRIC
                self.par[i] = law.param
            else:
                self.fam[i] = K.FAM_FINITE
                vals.append(law.values)
                tails.append(law._tail)
                conds.append(law._cond)
                pos += law.values.size
        self.off[n] = pos
        if vals:
            self.fvals = np.concatenate(vals).astype(np.int64)
            self.ftail = np.concatenate(tails).astype(np.float64)
            self.fcond = np.concatenate(conds).astype(np.float64)
        else:
            self.fvals = np.zeros(1, dtype=np.int64)
            self.ftail = np.zeros(1, dtype=np.float64)
            self.fcond = np.zeros(1, dtype=np.float64)
        # the finite tail search reads tail[hi] as zero past each block
        self.ftail = np.append(self.ftail, 0.0)

    def args(self):
        return self.fam, self.par, self.off, self.fvals, self.ftail, self.fcond

    def block(self, i):
        return (self.fam[i], self.par[i], self.off[i], self.off[i + 1],
                self.fvals, self.ftail, self.fcond)


def _table(law):
    if law._packed is None:
        object.__setattr__(law, "_packed", LawTable([law]))
    return law._packed


# -- sampling ---------------------------------------------------------------------

def sample_one(law, rng):
    """One offspring count drawn from ``law`` using the stream ``rng``."""
    fam, par, lo, hi, fvals, ftail, _ = _table(law).block(0)
    return int(K.sample_one(rng.state, fam, par, lo, hi, fvals, ftail))


def _fast_path_ok(law, z):
    return z < KERNEL_CAP and z * max(law.mean, 1.0) * 4.0 + 1e6 < KERNEL_CAP


def sample_total(law, z, rng, cap=DEFAULT_CAP):
    """Sum of ``z`` independent offspring counts, exact in distribution.

    Poisson totals are one Poisson(z * lam) draw; shifted geometric totals
    are ``z`` plus a negative binomial; finite laws use sequential binomial
    splitting over the support. Counts above 2**62 are handled with Python
    integers for the Poisson and geometric families; finite-support totals
    stop at 2**62.

    Raises PopulationOverflow when the result would exceed ``cap``.
    """
    z = int(z)
    if z < 0:
        raise ValueError("z must be nonnegative")
    if z == 0:
        return 0
    cap = int(cap)
    if _fast_path_ok(law, z) or law.family == "finite" or cap <= KERNEL_CAP:
        if z >= KERNEL_CAP:
            raise PopulationOverflow(f"{z} parents exceed the 2**62 sampling range",
                                     partial={"law": law, "z": z})
        fam, par, lo, hi, fvals, ftail, fcond = _table(law).block(0)
        out = int(K.sample_total(rng.state, fam, par, lo, hi, fvals, ftail, fcond,
                                 np.int64(z), np.int64(min(cap, KERNEL_CAP))))
        if out < 0:
            raise PopulationOverflow(f"total offspring of {z} parents exceeds cap {cap}",
                                     partial={"law": law, "z": z})
        return out
    if law.family == "poisson":
        out = _poisson_big(rng, z * law.param)
    else:
        s = law.param
        out = z + _poisson_big(rng, rng.gamma(float(z)) * s / (1.0 - s))
    if out > cap:
        raise PopulationOverflow(f"total offspring of {z} parents exceeds cap {cap}",
                                 partial={"law": law, "z": z})
    return out


def _poisson_big(rng, mu):
    # same reduction as the compiled sampler, carried in Python integers
    acc = 0
    while mu > 2.0 ** 60:
        n = int(mu * 0.875)
        x = rng.gamma(float(n))
        if x < mu:
            acc += n
            mu -= x
        else:
            return acc + _binomial_big(rng, n - 1, mu / x)
    return acc + int(K.poisson(rng.state, mu))


def _binomial_big(rng, n, p):
    acc = 0
    while n > (1 << 60):
        i = (n + 1) // 2
        y = rng.beta(float(i), float(n + 1 - i))
        if y <= p:
            acc += i
            n -= i
            p = (p - y) / (1.0 - y)
        else:
            n = i - 1
            p = p / y
    return acc + int(K.binomial(rng.state, np.int64(n), p))


def stream(seed):
    """Convenience: a fresh :class:`~bprelab.rng.Stream`."""
    return Stream(seed)
