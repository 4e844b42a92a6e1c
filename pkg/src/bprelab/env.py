"""Environment processes and realized environment sequences."""

import math
import warnings

import numpy as np

from . import _kernels as K
from .errors import InvalidModel
from .offspring import OffspringLaw, law_from_spec
from .rng import as_seed

PROB_TOL = 1e-12
STATIONARY_TOL = 1e-12


def _check_distribution(p, what):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidModel(f"{what} must be a nonempty vector")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise InvalidModel(f"{what} has negative or non-finite entries")
    total = math.fsum(p)
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidModel(f"{what} sums to {total!r}, not 1")
    return p


def _cdf(p):
    c = np.cumsum(p)
    c[-1] = 1.0
    return c


def stationary_distribution(transition, tol=STATIONARY_TOL, max_iter=1_000_000):
    """Stationary law of a row-stochastic matrix by power iteration.

    Iterates the lazy chain (I + P)/2, which has the same stationary law and
    is aperiodic, until successive iterates differ by less than ``tol`` in
    L1 norm.
    """
    P = np.asarray(transition, dtype=np.float64)
    n = P.shape[0]
    lazy = 0.5 * (np.eye(n) + P)
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise InvalidModel("power iteration for the stationary distribution did not converge")


class EnvironmentModel:
    """Generator of environment sequences.

    ``kind`` is one of ``"deterministic"``, ``"iid"`` or ``"markov"``. Build
    instances with :meth:`deterministic`, :meth:`iid`, :meth:`markov` or
    :func:`model_from_spec`.
    """

    def __init__(self, kind, laws, *, extend="repeat_last", probs=None,
                 transition=None, initial=None):
        if not laws:
            raise InvalidModel("a model needs at least one law")
        for law in laws:
            if not isinstance(law, OffspringLaw):
                raise InvalidModel(f"expected OffspringLaw, got {type(law).__name__}")
        self.kind = kind
        self.laws = tuple(laws)
        self.extend = extend
        self.probs = None
        self.transition = None
        self.initial = None
        n = len(self.laws)
        if kind == "deterministic":
            if extend not in ("repeat_last", "cyclic"):
                raise InvalidModel(f"extend must be 'repeat_last' or 'cyclic', got {extend!r}")
        elif kind == "iid":
            self.probs = _check_distribution(probs, "iid probabilities")
            if self.probs.size != n:
                raise InvalidModel("iid probabilities and laws differ in length")
        elif kind == "markov":
            T = np.asarray(transition, dtype=np.float64)
            if T.shape != (n, n):
                raise InvalidModel(f"transition matrix must be {n}x{n}")
            for i in range(n):
                _check_distribution(T[i], f"transition row {i}")
            self.transition = T
            pi = stationary_distribution(T)
            if initial is None:
                self.initial = pi
            else:
                self.initial = _check_distribution(initial, "initial distribution")
                if self.initial.size != n:
                    raise InvalidModel("initial distribution and laws differ in length")
                if np.abs(self.initial - pi).sum() > 1e-9:
                    warnings.warn("Markov initial distribution differs from the stationary one; "
                                  "annealed statements assume a stationary environment",
                                  stacklevel=2)
        else:
            raise InvalidModel(f"unknown environment kind {kind!r}")
        for a in (self.probs, self.transition, self.initial):
            if a is not None:
                a.setflags(write=False)

    @classmethod
    def deterministic(cls, laws, extend="repeat_last"):
        return cls("deterministic", list(laws), extend=extend)

    @classmethod
    def constant(cls, law):
        return cls("deterministic", [law])

    @classmethod
    def iid(cls, laws, probs):
        return cls("iid", list(laws), probs=probs)

    @classmethod
    def markov(cls, laws, transition, initial=None):
        return cls("markov", list(laws), transition=transition, initial=initial)

    # -- derived flags ------------------------------------------------------

    def _possible(self):
        """Laws that occur with positive probability."""
        if self.kind == "iid":
            return [law for law, p in zip(self.laws, self.probs) if p > 0]
        if self.kind == "markov":
            reach = (self.initial > 0) | np.any(self.transition > 0, axis=0)
            return [law for law, r in zip(self.laws, reach) if r]
        return list(self.laws)

    @property
    def strongly_supercritical(self):
        return all(law.p0_zero for law in self._possible())

    @property
    def nondegenerate(self):
        return not any(law.degenerate for law in self._possible())

    @property
    def finite_state(self):
        # a constant deterministic environment is the one-state i.i.d. case
        return self.kind in ("iid", "markov") or len(set(self.laws)) == 1

    @property
    def is_random(self):
        return self.kind in ("iid", "markov")

    def state_distribution(self):
        """Stationary weights of the states (the law list order)."""
        if self.kind == "iid":
            return np.array(self.probs)
        if self.kind == "markov":
            return stationary_distribution(self.transition)
        if self.extend == "cyclic" or len(self.laws) == 1:
            return np.full(len(self.laws), 1.0 / len(self.laws))
        w = np.zeros(len(self.laws))
        w[-1] = 1.0
        return w

    def mean_log_m(self):
        """Long-run average of log m_n: E log m_0 for random models."""
        logs = np.array([math.log(law.mean) for law in self.laws])
        return float(np.dot(self.state_distribution(), logs))

    def essinf_mean(self):
        """Smallest mean among laws that occur."""
        return min(law.mean for law in self._possible())

    def kernel_cdfs(self):
        """(initial cdf, transition cdf rows) driving the compiled realizer."""
        n = len(self.laws)
        if self.kind == "iid":
            c = _cdf(self.probs)
            return c.copy(), np.tile(c, (n, 1))
        if self.kind == "markov":
            rows = np.vstack([_cdf(r) for r in self.transition])
            return _cdf(self.initial), rows
        raise InvalidModel("deterministic models have no transition structure")

    def to_spec(self):
        spec = {"kind": self.kind, "laws": [law.to_spec() for law in self.laws]}
        if self.kind == "deterministic":
            spec["extend"] = self.extend
        elif self.kind == "iid":
            spec["probs"] = self.probs.tolist()
        else:
            spec["transition"] = self.transition.tolist()
            spec["initial"] = self.initial.tolist()
        return spec

    def __repr__(self):
        return f"EnvironmentModel({self.kind}, {list(self.laws)})"


def model_from_spec(spec):
    """Build a model from its JSON form (see the config schema)."""
    kind = spec.get("kind")
    laws = [law_from_spec(x) for x in spec.get("laws", [])]
    if kind == "deterministic":
        return EnvironmentModel.deterministic(laws, spec.get("extend", "repeat_last"))
    if kind == "iid":
        return EnvironmentModel.iid(laws, spec.get("probs"))
    if kind == "markov":
        return EnvironmentModel.markov(laws, spec.get("transition"), spec.get("initial"))
    raise InvalidModel(f"unknown environment kind {kind!r}")


class EnvironmentSequence:
    """One realized environment (xi_0, xi_1, ...) truncated to a horizon.

    Laws are stored as indices into ``palette`` (the model's law list).
    """

    def __init__(self, palette, index, origin_model=None, env_seed=0, offset=0):
        index = np.ascontiguousarray(index, dtype=np.int32)
        if index.ndim != 1 or index.size < 1:
            raise InvalidModel("an environment sequence needs at least one generation")
        index.setflags(write=False)
        self.palette = tuple(palette)
        self.index = index
        self.origin_model = origin_model
        self.env_seed = int(env_seed)
        self.offset = int(offset)
        self._table = None

    def __len__(self):
        return int(self.index.size)

    def __getitem__(self, k):
        return self.palette[self.index[k]]

    @property
    def laws(self):
        return [self.palette[i] for i in self.index]

    def means(self):
        m = np.array([law.mean for law in self.palette])
        return m[self.index]

    def log_means(self):
        lm = np.array([math.log(law.mean) for law in self.palette])
        return lm[self.index]

    def law_table(self):
        from .offspring import LawTable
        if self._table is None:
            self._table = LawTable(self.palette)
        return self._table

    def shift(self, n):
        return shift(self, n)

    def __repr__(self):
        return (f"EnvironmentSequence(len={len(self)}, offset={self.offset}, "
                f"env_seed={self.env_seed})")


def realize(model, horizon, env_seed=0):
    """Draw one environment realization of length ``horizon``.

    Deterministic models ignore the seed. For random models the draw uses
    one uniform per generation from the stream seeded by ``env_seed``, so a
    longer horizon extends a shorter one.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise InvalidModel("horizon must be at least 1")
    n = len(model.laws)
    if model.kind == "deterministic":
        k = np.arange(horizon)
        if model.extend == "cyclic":
            idx = k % n
        else:
            idx = np.minimum(k, n - 1)
        return EnvironmentSequence(model.laws, idx, model, env_seed, 0)
    init_cdf, trans_cdf = model.kernel_cdfs()
    out = np.empty(horizon, dtype=np.int32)
    K.realize_states(init_cdf, trans_cdf, horizon, as_seed(env_seed), out)
    return EnvironmentSequence(model.laws, out, model, env_seed, 0)


def shift(seq, n):
    """The shifted environment T^n xi."""
    n = int(n)
    if n < 0 or n >= len(seq):
        raise IndexError(f"shift {n} out of range for a sequence of length {len(seq)}")
    if n == 0:
        return seq
    out = EnvironmentSequence(seq.palette, seq.index[n:], seq.origin_model,
                              seq.env_seed, seq.offset + n)
    out._table = seq._table
    return out


def constant_env(law, horizon):
    """Shortcut for the constant environment of one law."""
    return realize(EnvironmentModel.constant(law), horizon)
