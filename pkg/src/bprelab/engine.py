"""Trajectory simulation and estimation of the martingale limit W.

Population counts are exact integers. The compiled fast path covers counts
below 2**62; beyond that, Poisson and shifted-geometric generations continue
with Python integers when the caller raises the cap.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import limits
from .env import EnvironmentModel, EnvironmentSequence, realize
from .errors import CampaignInvalid, PopulationOverflow
from .offspring import DEFAULT_CAP, KERNEL_CAP, sample_total
from .rng import MASK64, Stream, as_seed

DEFAULT_DEPTH = 25


def _fmt(x):
    return format(float(x), ".17g")


def replicate_seeds(seed, reps, start=0):
    """Seeds mix(seed, r) for r = start, ..., start + reps - 1."""
    return K.mix_array(as_seed(seed), np.uint64(start), int(reps))


@dataclass
class Trajectory:
    """One simulated path under a fixed environment."""

    env: EnvironmentSequence
    z: list
    log_p: np.ndarray
    w: np.ndarray
    traj_seed: int
    capped: bool

    @property
    def n(self):
        return len(self.z) - 1

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("k,Z,logP,W\n")
            for k, (z, lp, w) in enumerate(zip(self.z, self.log_p, self.w)):
                fh.write(f"{k},{z},{_fmt(lp)},{_fmt(w)}\n")


@dataclass
class WEstimate:
    value: float
    base_generation: int
    extra_depth: int
    residual_variance_bound: float
    tail_complete: bool = True


def _w_from(z, log_p):
    if z == 0:
        return 0.0
    return math.exp(math.log(z) - log_p)


def simulate(env, n_max, traj_seed, cap=DEFAULT_CAP):
    """Simulate Z_0 = 1, ..., Z_{n_max} under ``env``.

    The run is a deterministic function of (env, traj_seed). If a generation
    would exceed ``cap`` the trajectory stops at the last complete generation
    and ``capped`` is set.
    """
    n_max = int(n_max)
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if n_max > len(env):
        raise ValueError(f"n_max={n_max} exceeds the realized environment length {len(env)}")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    traj_seed = int(traj_seed) & MASK64
    table = env.law_table()
    if cap <= KERNEL_CAP:
        zout = np.zeros(n_max + 1, dtype=np.int64)
        idx = np.ascontiguousarray(env.index[:max(n_max, 1)])
        done = K.simulate_seeded(as_seed(traj_seed), idx, n_max, *table.args(),
                                 np.int64(cap), zout)
        z = [int(v) for v in zout[:done + 1]]
        capped = done < n_max
    else:
        rng = Stream(traj_seed)
        z = [1]
        capped = False
        for k in range(n_max):
            if z[-1] == 0:
                z.append(0)
                continue
            try:
                z.append(sample_total(env[k], z[-1], rng, cap))
            except PopulationOverflow:
                capped = True
                break
    log_p = limits.log_P_prefix(env, len(z) - 1)
    w = np.array([_w_from(zk, lp) for zk, lp in zip(z, log_p)])
    return Trajectory(env, z, log_p, w, traj_seed, capped)


def estimate_W(env, traj, extra_depth=DEFAULT_DEPTH, cap=DEFAULT_CAP):
    """Estimate W by continuing ``traj`` for ``extra_depth`` more generations.

    The continuation replays the trajectory's own stream, so generations up
    to n coincide with ``traj``. The residual bound is the quenched
    E(W - W_{n+K})**2, the variance-series tail from n + K.
    """
    if traj.capped:
        raise CampaignInvalid("cannot continue a capped trajectory")
    extra_depth = int(extra_depth)
    if extra_depth < 1:
        raise ValueError("extra_depth must be at least 1")
    n = traj.n
    total = n + extra_depth
    if total > len(env):
        raise ValueError(f"environment of length {len(env)} is too short for depth {total}")
    full = simulate(env, total, traj.traj_seed, cap)
    if full.capped:
        raise PopulationOverflow("continuation exceeded the population cap", partial=full)
    if full.z[:n + 1] != traj.z:
        raise CampaignInvalid("trajectory does not match its seed under this environment")
    bound, complete = residual_variance(env, total)
    return WEstimate(float(full.w[total]), n, extra_depth, bound, complete)


def residual_variance(env, generation):
    """(tail of the variance series from ``generation``, whether it converged)."""
    if generation >= len(env):
        return 0.0, False
    series = limits.delta2_partial(env)
    return series.tail_from(generation), series.converged


@dataclass
class Batch:
    """Records of many independent replicates.

    ``z``, ``log_p`` and ``w`` have one row per replicate and one column per
    recorded generation.
    """

    records: np.ndarray
    z: np.ndarray
    log_p: np.ndarray
    w: np.ndarray
    gauss: np.ndarray
    states: np.ndarray
    palette: tuple
    mode: str
    env: EnvironmentSequence = None

    def column(self, generation):
        return int(np.searchsorted(self.records, generation))


def run_replicates(source, n_gen, records, reps, seed, mode="quenched", env_seed=0,
                   env_horizon=None, keep_states=False, draw_normal=False,
                   cap=DEFAULT_CAP, start=0):
    """Simulate ``reps`` independent trajectories and keep selected generations.

    Replicate r uses the trajectory stream mix(seed, start + r); in annealed
    mode it first realizes its own environment from mix(env_seed, start + r).
    Quenched runs share one environment: ``source`` itself, or a model
    realized with ``env_seed``.
    """
    n_gen = int(n_gen)
    reps = int(reps)
    if reps < 1:
        raise ValueError("reps must be at least 1")
    records = np.unique(np.asarray(records, dtype=np.int64))
    if records.size == 0 or records[0] < 0 or records[-1] > n_gen:
        raise ValueError("records must lie in [0, n_gen]")
    horizon = max(int(env_horizon or n_gen), n_gen, 1)
    annealed = mode == "annealed"
    if mode not in ("quenched", "annealed"):
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(source, EnvironmentModel):
        model = source
        if annealed and not model.is_random:
            annealed = False
        if not annealed:
            source = realize(model, horizon, env_seed)
    elif annealed:
        raise ValueError("annealed sampling needs an EnvironmentModel")
    traj_seeds = replicate_seeds(seed, reps, start)

    if cap > KERNEL_CAP:
        return _run_python(source, n_gen, records, traj_seeds, draw_normal, cap, mode)

    if annealed:
        palette = model.laws
        init_cdf, trans_cdf = model.kernel_cdfs()
        state_law = np.arange(len(palette), dtype=np.int32)
        fixed_idx = np.zeros(horizon, dtype=np.int32)
        env_seeds = replicate_seeds(env_seed, reps, start)
        from .offspring import LawTable
        table = LawTable(palette)
        env = None
    else:
        env = source
        if len(env) < n_gen:
            raise ValueError(f"environment of length {len(env)} shorter than {n_gen} generations")
        horizon = min(horizon, len(env))
        palette = env.palette
        table = env.law_table()
        init_cdf = np.ones(1)
        trans_cdf = np.ones((1, 1))
        state_law = np.zeros(1, dtype=np.int32)
        fixed_idx = np.ascontiguousarray(env.index[:horizon])
        env_seeds = np.zeros(reps, dtype=np.uint64)
    zrec, lprec, last, gauss, states = K.run_batch(
        traj_seeds, env_seeds, annealed, fixed_idx, init_cdf, trans_cdf, state_law,
        horizon, *table.args(), table.logm, n_gen, records, np.int64(cap),
        keep_states and annealed, draw_normal)
    if not annealed:
        lp = limits.log_P_prefix(env, n_gen)[records]
        lprec = np.broadcast_to(lp, zrec.shape).copy()
        if keep_states:
            states = np.broadcast_to(env.index[:horizon], (reps, horizon))
    bad = np.flatnonzero(zrec[:, -1] < 0)
    if bad.size:
        raise PopulationOverflow(
            f"{bad.size} replicate(s) exceeded the population cap {cap}; first is replicate {start + bad[0]}",
            partial={"replicates": (start + bad).tolist(), "last_generation": last[bad].tolist()})
    with np.errstate(divide="ignore"):
        w = np.exp(np.log(zrec.astype(np.float64)) - lprec)
    return Batch(records, zrec, lprec, w, gauss, states if keep_states else None,
                 tuple(palette), "annealed" if annealed else "quenched", env)


def _run_python(env, n_gen, records, traj_seeds, draw_normal, cap, mode):
    # slow path for caps above 2**62: one replicate at a time
    if mode == "annealed":
        raise ValueError("caps above 2**62 are only supported for quenched runs")
    reps = traj_seeds.size
    zrec = np.zeros((reps, records.size), dtype=object)
    w = np.zeros((reps, records.size))
    gauss = np.zeros(reps)
    lp = limits.log_P_prefix(env, n_gen)[records]
    for r, sd in enumerate(traj_seeds):
        if draw_normal:
            raise ValueError("normal draws are not supported above the 2**62 cap")
        tr = simulate(env, n_gen, int(sd), cap)
        if tr.capped:
            raise PopulationOverflow(f"replicate {r} exceeded the population cap", partial=tr)
        for i, g in enumerate(records):
            zrec[r, i] = tr.z[g]
            w[r, i] = tr.w[g]
    return Batch(records, zrec, np.broadcast_to(lp, w.shape).copy(), w, gauss, None,
                 env.palette, "quenched", env)


def sample_fluctuation(env, n, extra_depth=DEFAULT_DEPTH, reps=1, seed=0, cap=DEFAULT_CAP):
    """Array of (W_n, W_hat - W_n) rows for ``reps`` quenched replicates.

    Row r comes from the stream mix(seed, r) and equals the result of
    ``simulate(env, n + extra_depth, mix(seed, r))``.
    """
    total = int(n) + int(extra_depth)
    batch = run_replicates(env, total, [n, total], reps, seed, cap=cap)
    wn = batch.w[:, 0]
    return np.column_stack([wn, batch.w[:, 1] - wn])


def write_fluctuations_csv(path, pairs):
    with open(path, "w", newline="\n") as fh:
        fh.write("rep,Wn,dW\n")
        for r, (wn, dw) in enumerate(pairs):
            fh.write(f"{r},{_fmt(wn)},{_fmt(dw)}\n")
