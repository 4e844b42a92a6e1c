"""Compiled sampling primitives.

Everything here runs under numba in nopython mode. Each replicate owns a
xoshiro256** state (four ``uint64`` words) seeded from a single 64-bit value
through a SplitMix64 stream, so results never depend on execution order.

All unsigned arithmetic is kept in ``uint64``; mixing ``uint64`` with plain
Python ints makes numba promote to ``float64``, hence the explicit constants.
"""

import math

import numpy as np
from numba import njit, prange

U1 = np.uint64(1)
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
STRIDE = np.uint64(0xD1B54A32D192ED03)
S11 = np.uint64(11)
S17 = np.uint64(17)
S27 = np.uint64(27)
S30 = np.uint64(30)
S31 = np.uint64(31)
S45 = np.uint64(45)
S7 = np.uint64(7)
S64 = np.uint64(64)
FIVE = np.uint64(5)
NINE = np.uint64(9)
INV53 = 1.0 / 9007199254740992.0

# Above these sizes the float-based rejection samplers lose integer
# resolution; recursive splitting brings the argument below them first.
BIG_MEAN = 17592186044416.0  # 2**44
BIG_COUNT = 17592186044416  # 2**44
# a Poisson mean this large cannot produce a value that fits below 2**62
SPARSE_HITS = 1.0
HOPELESS_MEAN = 6.9e18

FAM_POISSON = 0
FAM_GEOMETRIC = 1
FAM_FINITE = 2


# ---------------------------------------------------------------- seeding

@njit(cache=True)
def fmix64(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(cache=True)
def mix(seed, r):
    """Derived 64-bit seed for replicate ``r`` of base ``seed``."""
    h = fmix64(np.uint64(seed) + GOLDEN)
    return fmix64(h ^ ((np.uint64(r) + U1) * STRIDE))


@njit(cache=True)
def seed_state(seed, state):
    x = np.uint64(seed)
    for i in range(4):
        x = x + GOLDEN
        state[i] = fmix64(x)


@njit(cache=True)
def _rotl(x, k):
    return (x << k) | (x >> (S64 - k))


@njit(cache=True)
def next_u64(s):
    result = _rotl(s[1] * FIVE, S7) * NINE
    t = s[1] << S17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], S45)
    return result


@njit(cache=True)
def uniform(s):
    """Uniform double on the open interval (0, 1)."""
    return (float(next_u64(s) >> S11) + 0.5) * INV53


@njit(cache=True)
def normal(s):
    # Marsaglia polar method; the second variate is discarded
    while True:
        u = 2.0 * uniform(s) - 1.0
        v = 2.0 * uniform(s) - 1.0
        w = u * u + v * v
        if w < 1.0 and w > 0.0:
            return u * math.sqrt(-2.0 * math.log(w) / w)


@njit(cache=True)
def gamma(s, shape):
    """Gamma(shape, 1) by Marsaglia-Tsang; boosted for shape < 1."""
    boost = 1.0
    if shape < 1.0:
        boost = uniform(s) ** (1.0 / shape)
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = normal(s)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(s)
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v * boost
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v * boost


@njit(cache=True)
def beta(s, a, b):
    x = gamma(s, a)
    y = gamma(s, b)
    return x / (x + y)


# ---------------------------------------------------------------- poisson

@njit(cache=True)
def _poisson_inversion(s, mu):
    limit = math.exp(-mu)
    k = 0
    prod = uniform(s)
    while prod > limit:
        k += 1
        prod *= uniform(s)
    return k


@njit(cache=True)
def _poisson_ptrs(s, mu):
    # Hoermann (1993) transformed rejection with squeeze, mu >= 10
    slam = math.sqrt(mu)
    loglam = math.log(mu)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = uniform(s) - 0.5
        v = uniform(s)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mu + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -mu + k * loglam - math.lgamma(k + 1.0)):
            return np.int64(k)


@njit(cache=True)
def binomial(s, n, p):
    """Exact Binomial(n, p) draw for 0 <= n < 2**63."""
    if n <= 0 or p <= 0.0:
        return np.int64(0)
    if p >= 1.0:
        return np.int64(n)
    flip = p > 0.5
    if flip:
        p = 1.0 - p
    n0 = n
    acc = np.int64(0)
    # order-statistic splitting: the i-th smallest of n uniforms is Beta(i, n+1-i)
    while n > BIG_COUNT:
        i = (n + 1) // 2
        y = beta(s, float(i), float(n + 1 - i))
        if y <= p:
            acc += i
            n -= i
            p = (p - y) / (1.0 - y)
        else:
            n = i - 1
            p = p / y
    if p > 0.5:
        k = acc + n - _binomial_small_p(s, n, 1.0 - p)
    else:
        k = acc + _binomial_small_p(s, n, p)
    if flip:
        return n0 - k
    return k


@njit(cache=True)
def _binomial_small_p(s, n, p):
    if n <= 0 or p <= 0.0:
        return np.int64(0)
    if n * p < 10.0:
        return _binomial_inversion(s, n, p)
    return _binomial_btrs(s, n, p)


@njit(cache=True)
def _binomial_inversion(s, n, p):
    q = 1.0 - p
    ratio = p / q
    a = (n + 1) * ratio
    r0 = math.exp(n * math.log1p(-p))
    while True:
        u = uniform(s)
        r = r0
        x = np.int64(0)
        ok = True
        while u > r:
            u -= r
            x += 1
            if x > n:
                ok = False
                break
            r *= a / x - ratio
        if ok:
            return x


@njit(cache=True)
def _binomial_btrs(s, n, p):
    # Hoermann (1993) transformed rejection, requires n*p >= 10 and p <= 1/2
    q = 1.0 - p
    spq = math.sqrt(n * p * q)
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    alpha = (2.83 + 5.1 / b) * spq
    vr = 0.92 - 4.2 / b
    m = math.floor((n + 1) * p)
    lpq = math.log(p / q)
    h = math.lgamma(m + 1.0) + math.lgamma(n - m + 1.0)
    while True:
        u = uniform(s) - 0.5
        v = uniform(s)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + c)
        if k < 0.0 or k > n:
            continue
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        v = math.log(v * alpha / (a / (us * us) + b))
        if v <= h - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0) + (k - m) * lpq:
            return np.int64(k)


@njit(cache=True)
def poisson(s, mu):
    """Exact Poisson(mu) draw; result must fit in int64."""
    if mu <= 0.0:
        return np.int64(0)
    acc = np.int64(0)
    # Ahrens-Dieter reduction on the arrival times of a unit-rate process
    while mu > BIG_MEAN:
        n = np.int64(mu * 0.875)
        x = gamma(s, float(n))
        if x < mu:
            acc += n
            mu -= x
        else:
            return acc + binomial(s, n - 1, mu / x)
    if mu < 10.0:
        return acc + _poisson_inversion(s, mu)
    return acc + _poisson_ptrs(s, mu)


# ---------------------------------------------------------------- offspring

@njit(cache=True)
def _finite_pick(s, tail, lo, hi):
    """Index i in [lo, hi) with probability (tail[i]-tail[i+1])/tail[lo]."""
    x = uniform(s) * tail[lo]
    # largest i with tail[i] > x; tail is nonincreasing, tail[hi] == 0
    a = lo
    b = hi - 1
    while a < b:
        mid = (a + b + 1) // 2
        if tail[mid] > x:
            a = mid
        else:
            b = mid - 1
    return a


@njit(cache=True)
def sample_one(s, fam, par, lo, hi, fvals, ftail):
    if fam == FAM_POISSON:
        return poisson(s, par)
    if fam == FAM_GEOMETRIC:
        # P(k) = (1-par) par**(k-1), k >= 1
        return np.int64(1) + np.int64(math.floor(math.log(uniform(s)) / math.log(par)))
    return fvals[_finite_pick(s, ftail, lo, hi)]


@njit(cache=True)
def sample_total(s, fam, par, lo, hi, fvals, ftail, fcond, z, cap):
    """Sum of z i.i.d. offspring counts; returns -1 when the sum exceeds cap."""
    if z == 0:
        return np.int64(0)
    if fam == FAM_POISSON:
        mu = z * par
        if mu > HOPELESS_MEAN:
            return np.int64(-1)
        out = poisson(s, mu)
    elif fam == FAM_GEOMETRIC:
        # z shifted geometrics: z + NegBin(z, 1-par) via the gamma-Poisson mixture
        mu = gamma(s, float(z)) * par / (1.0 - par)
        if mu > HOPELESS_MEAN:
            return np.int64(-1)
        extra = poisson(s, mu)
        if extra > cap - z:
            return np.int64(-1)
        out = z + extra
    else:
        out = _finite_total(s, lo, hi, fvals, ftail, fcond, z, cap)
    if out > cap:
        return np.int64(-1)
    return out


@njit(cache=True)
def _binomial_positive(s, n, p):
    """Binomial(n, p) conditioned on being at least 1."""
    if p >= 1.0:
        return n
    lq = math.log1p(-p)
    if n * p >= 1.0:
        while True:
            k = binomial(s, n, p)
            if k > 0:
                return k
    # inversion from k = 1; P(N >= 1) = 1 - (1-p)**n
    mass = -math.expm1(n * lq)
    u = uniform(s) * mass
    r = n * p * math.exp((n - 1) * lq)
    ratio = p / (1.0 - p)
    k = np.int64(1)
    while u > r and k < n:
        u -= r
        r *= (n - k) / (k + 1.0) * ratio
        k += 1
    return k


@njit(cache=True)
def _tail_search(tail, j, hi, x):
    """Largest i in [j, hi) with tail[i] > x, given tail[j] > x; galloping from j."""
    step = 1
    a = j
    while a + step < hi and tail[a + step] > x:
        a += step
        step *= 2
    b = min(a + step, hi) - 1
    while a < b:
        mid = (a + b + 1) // 2
        if tail[mid] > x:
            a = mid
        else:
            b = mid - 1
    return a


@njit(cache=True)
def _finite_total(s, lo, hi, fvals, ftail, fcond, z, cap):
    # sequential conditional binomials over atoms in decreasing-probability
    # order while atoms are densely hit; in the sparse part, jump straight to
    # the next occupied atom, the minimum of the remaining parents' draws,
    # which has P(M >= i) = (tail[i] / tail[j])**rem
    rem = z
    total = np.int64(0)
    j = lo
    last = hi - 1
    while rem > 0 and j < last and rem * fcond[j] >= SPARSE_HITS:
        c = binomial(s, rem, fcond[j])
        if c > 0:
            v = fvals[j]
            if v > 0 and c > (cap - total) // v:
                return np.int64(-1)
            total += c * v
            rem -= c
        j += 1
    while rem > 0:
        if j < last:
            x = ftail[j] * math.exp(math.log(uniform(s)) / rem)
            j = _tail_search(ftail, j, hi, x)
        if j >= last:
            c = rem
        else:
            c = _binomial_positive(s, rem, fcond[j])
        v = fvals[j]
        if v > 0 and c > (cap - total) // v:
            return np.int64(-1)
        total += c * v
        rem -= c
        j += 1
    return total


# ---------------------------------------------------------------- environment

@njit(cache=True)
def _pick_cdf(u, cdf):
    i = 0
    last = cdf.shape[0] - 1
    while i < last and u >= cdf[i]:
        i += 1
    return i


@njit(cache=True)
def realize_states(init_cdf, trans_cdf, horizon, seed, out):
    """Fill out[:horizon] with a chain path; one uniform per step."""
    s = np.empty(4, dtype=np.uint64)
    seed_state(seed, s)
    x = _pick_cdf(uniform(s), init_cdf)
    out[0] = x
    for k in range(1, horizon):
        x = _pick_cdf(uniform(s), trans_cdf[x])
        out[k] = x


# ---------------------------------------------------------------- trajectories

@njit(cache=True)
def simulate_path(s, law_idx, n_gen, z0, fam, par, off, fvals, ftail, fcond, cap, zout):
    """Run n_gen generations from z0 under the per-generation law indices.

    zout[k] receives Z_k. Returns the last complete generation index; a
    value below n_gen means the next generation exceeded cap.
    """
    z = np.int64(z0)
    zout[0] = z
    for k in range(n_gen):
        li = law_idx[k]
        if z == 0:
            zout[k + 1] = 0
            continue
        nz = sample_total(s, fam[li], par[li], off[li], off[li + 1],
                          fvals, ftail, fcond, z, cap)
        if nz < 0:
            return k
        z = nz
        zout[k + 1] = z
    return n_gen


@njit(cache=True)
def _neumaier_prefix(law_idx, logm, n, out):
    total = 0.0
    comp = 0.0
    out[0] = 0.0
    for k in range(n):
        x = logm[law_idx[k]]
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
        out[k + 1] = total + comp


@njit(cache=True, parallel=True)
def run_batch(traj_seeds, env_seeds, annealed, fixed_idx, init_cdf, trans_cdf,
              state_law, env_horizon, fam, par, off, fvals, ftail, fcond, logm,
              n_gen, records, cap, keep_states, draw_normal):
    """Simulate one trajectory per seed and keep Z and log P at ``records``.

    In annealed mode replicate r first realizes its own environment from
    ``env_seeds[r]``; otherwise every replicate uses ``fixed_idx``. When
    ``draw_normal`` is set, each replicate draws one standard normal from its
    own stream before simulating.
    """
    reps = traj_seeds.shape[0]
    nrec = records.shape[0]
    zrec = np.full((reps, nrec), -1, dtype=np.int64)
    lprec = np.zeros((reps, nrec), dtype=np.float64)
    last = np.zeros(reps, dtype=np.int64)
    gauss = np.zeros(reps, dtype=np.float64)
    if keep_states:
        states = np.zeros((reps, env_horizon), dtype=np.int32)
    else:
        states = np.zeros((reps, 0), dtype=np.int32)
    for r in prange(reps):
        s = np.empty(4, dtype=np.uint64)
        law_idx = np.empty(env_horizon, dtype=np.int32)
        if annealed:
            st = np.empty(env_horizon, dtype=np.int32)
            realize_states(init_cdf, trans_cdf, env_horizon, env_seeds[r], st)
            for k in range(env_horizon):
                law_idx[k] = state_law[st[k]]
            if keep_states:
                for k in range(env_horizon):
                    states[r, k] = st[k]
        else:
            for k in range(env_horizon):
                law_idx[k] = fixed_idx[k]
        seed_state(traj_seeds[r], s)
        if draw_normal:
            gauss[r] = normal(s)
        zpath = np.empty(n_gen + 1, dtype=np.int64)
        lp = np.empty(n_gen + 1, dtype=np.float64)
        done = simulate_path(s, law_idx, n_gen, 1, fam, par, off, fvals, ftail,
                             fcond, cap, zpath)
        _neumaier_prefix(law_idx, logm, n_gen, lp)
        last[r] = done
        for i in range(nrec):
            g = records[i]
            lprec[r, i] = lp[g]
            if g <= done:
                zrec[r, i] = zpath[g]
    return zrec, lprec, last, gauss, states


@njit(cache=True)
def mix_array(seed, start, count):
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = mix(seed, np.uint64(start + i))
    return out


@njit(cache=True)
def simulate_seeded(seed, law_idx, n_gen, fam, par, off, fvals, ftail, fcond, cap, zout):
    s = np.empty(4, dtype=np.uint64)
    seed_state(seed, s)
    return simulate_path(s, law_idx, n_gen, 1, fam, par, off, fvals, ftail, fcond, cap, zout)


@njit(cache=True)
def totals_many(seed, fam, par, lo, hi, fvals, ftail, fcond, z, count, cap):
    """``count`` draws of the z-fold total through the convolution samplers."""
    s = np.empty(4, dtype=np.uint64)
    seed_state(seed, s)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        out[i] = sample_total(s, fam, par, lo, hi, fvals, ftail, fcond, z, cap)
    return out


@njit(cache=True)
def naive_many(seed, fam, par, lo, hi, fvals, ftail, z, count):
    """``count`` draws of the z-fold total as explicit sums of single draws."""
    s = np.empty(4, dtype=np.uint64)
    seed_state(seed, s)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        acc = np.int64(0)
        for _ in range(z):
            acc += sample_one(s, fam, par, lo, hi, fvals, ftail)
        out[i] = acc
    return out
