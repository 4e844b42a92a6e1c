"""Monte Carlo checks of the convergence theorems for W_n.

Each campaign returns a :class:`VerificationReport`. Every pass/fail line
cites a numeric threshold that also appears in the report's config echo,
and the report is a deterministic function of its inputs and seeds apart
from the wall-clock fields.

The almost-sure rate statements are probed through moment and median decay
of |W_hat - W_n|, which is a surrogate: o(.) almost surely cannot be
falsified from finitely many paths.
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import engine, limits
from . import _kernels as K
from .env import EnvironmentModel, EnvironmentSequence, realize
from .errors import CampaignInvalid, HypothesisViolation
from .offspring import LawTable
from .rng import MASK64, as_seed, mix

SCHEMA_VERSION = 1
KS_C01 = 1.6276
VALIDITY_FRACTION = 0.01

HYP_NONDEGENERATE = "p_i(xi_0) < 1 a.s. for all i"
HYP_STRONG = "p_0(xi_0) = 0 a.s."
HYP_P1 = "p_1(xi_0) < 1 a.s."
HYP_FINITE = "the environment takes finitely many values"

# tags separating the seed streams of one campaign
TAG_TRAJ, TAG_LIMIT, TAG_ENV, TAG_LIMIT_ENV, TAG_QENV, TAG_MC = range(1, 7)


def sub_seed(seed, tag, i=0):
    """Seed of stream ``i`` under ``tag``: mix(mix(seed, tag), i)."""
    return mix(mix(int(seed) & MASK64, tag), i)


# -- targets and reports ------------------------------------------------------

@dataclass(frozen=True)
class RateTarget:
    """Expected decay of W - W_n.

    ``kind`` is ``"exponential"`` (slope -a/q per generation for |W - W_n|,
    with 1/p + 1/q = 1) or ``"polynomial"`` (o(n**-alpha)). ``a`` is
    E log m_0; when None, campaigns fill it in from the model.
    """

    kind: str
    a: float = None
    p: float = None
    q: float = None
    alpha: float = None

    def __post_init__(self):
        if self.kind == "exponential":
            if self.p is None or not 1.0 < self.p <= 2.0:
                raise ValueError("exponential target needs p in (1, 2]")
            q = self.p / (self.p - 1.0)
            if self.q is not None and not math.isclose(self.q, q, rel_tol=1e-12):
                raise ValueError("q must equal p / (p - 1)")
            object.__setattr__(self, "q", q)
        elif self.kind == "polynomial":
            if self.alpha is None or self.alpha <= 0:
                raise ValueError("polynomial target needs alpha > 0")
        else:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.a is not None and not self.a > 0:
            raise ValueError("a = E log m_0 must be positive (supercritical)")

    @classmethod
    def exponential(cls, p=2.0, a=None):
        return cls("exponential", a=a, p=p)

    @classmethod
    def polynomial(cls, alpha, a=None):
        return cls("polynomial", a=a, alpha=alpha)

    def with_a(self, a):
        if self.a is not None:
            return self
        return RateTarget(self.kind, a=a, p=self.p, alpha=self.alpha)

    def slope(self, statistic="mean_abs"):
        """Expected slope of log(statistic) against n."""
        if self.kind != "exponential":
            raise ValueError("only exponential targets have a slope per generation")
        power = 2.0 if statistic == "mean_square" else 1.0
        return -power * self.a / self.q

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "p": self.p, "q": self.q, "alpha": self.alpha}


@dataclass
class Check:
    name: str
    value: object
    threshold: object
    op: str
    passed: bool
    threshold_key: str = ""
    informational: bool = False
    label: str = ""


def _clean(x):
    # JSON has no inf/nan; numpy scalars become Python ones
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


@dataclass
class VerificationReport:
    """Outcome of one campaign."""

    campaign: str
    config: dict
    stats: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    degenerate: bool = False
    # raw sample columns for samples.csv; not part of the JSON report
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self):
        binding = [c for c in self.checks if not c.informational]
        return bool(binding) and not self.degenerate and all(c.passed for c in binding)

    def add_check(self, name, value, threshold, op, passed, threshold_key="",
                  informational=False, label=""):
        c = Check(name, value, threshold, op, bool(passed), threshold_key, informational, label)
        self.checks.append(c)
        return c

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return _clean({
            "schema_version": SCHEMA_VERSION,
            "campaign": self.campaign,
            "passed": self.passed,
            "degenerate": self.degenerate,
            "config": self.config,
            "stats": self.stats,
            "fits": self.fits,
            "checks": [c.__dict__ for c in self.checks],
            "notes": self.notes,
            "provenance": self.provenance,
        })

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def write_json(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_stats_csv(self, path):
        """Per-n statistics, one row each, floats at 17 significant digits."""
        rows = self.stats
        keys = []
        for r in rows:
            for k in r:
                if k not in keys and not isinstance(r[k], (list, dict)):
                    keys.append(k)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for r in rows:
                w.writerow([_csv_cell(r.get(k, "")) for k in keys])

    def summary_lines(self):
        out = [f"campaign {self.campaign}: {'PASS' if self.passed else 'FAIL'}"]
        if self.degenerate:
            out.append("  degenerate: all fluctuations vanish")
        for c in self.checks:
            tag = "info" if c.informational else ("pass" if c.passed else "FAIL")
            lab = f" [{c.label}]" if c.label else ""
            out.append(f"  {tag:4s} {c.name}{lab}: {_short(c.value)} {c.op} {_short(c.threshold)}")
        return out


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _start(campaign, config):
    rep = VerificationReport(campaign, config)
    rep.provenance["started_unix"] = time.time()
    return rep, time.perf_counter()


def _finish(rep, t0):
    rep.provenance["wall_clock_s"] = time.perf_counter() - t0
    return rep


# -- statistics helpers -----------------------------------------------------------

def ks_critical(alpha=0.01):
    """c(alpha) of the asymptotic two-sample test; c(0.01) = 1.6276."""
    if alpha == 0.01:
        return KS_C01
    return math.sqrt(-0.5 * math.log(alpha / 2.0))


def ks_threshold(m, n, alpha=0.01):
    """Rejection threshold c(alpha) * sqrt((m + n) / (m n))."""
    return ks_critical(alpha) * math.sqrt((m + n) / (m * n))


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def fit_line(x, y):
    """Least-squares line: (slope, intercept, slope standard error)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two points")
    if x.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return float(slope), float(y[0] - slope * x[0]), math.nan
    r = stats.linregress(x, y)
    return float(r.slope), float(r.intercept), float(r.stderr)


def wilson_interval(count, n, level=0.95):
    """Wilson score interval for a binomial proportion."""
    count = int(count)
    ci = stats.binomtest(count, int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def strictly_decreasing(v):
    v = list(v)
    return all(b < a for a, b in zip(v, v[1:]))


def strictly_increasing(v):
    v = list(v)
    return all(b > a for a, b in zip(v, v[1:]))


def top_half(ns):
    ns = sorted(ns)
    return ns[len(ns) // 2:]


# -- environment helpers -------------------------------------------------------

def _environment(source, horizon, env_seed):
    if isinstance(source, EnvironmentSequence):
        if len(source) < horizon:
            raise ValueError(f"environment of length {len(source)} is shorter than {horizon}")
        return source
    return realize(source, horizon, env_seed)


def _model_of(source):
    if isinstance(source, EnvironmentModel):
        return source
    return source.origin_model


def _palette_laws(source):
    if isinstance(source, EnvironmentModel):
        return source._possible()
    return [source.palette[i] for i in np.unique(source.index)]


def _mean_log_m(source):
    if isinstance(source, EnvironmentModel):
        return source.mean_log_m()
    return float(np.mean(source.log_means()))


def _require_nondegenerate(source):
    bad = [law for law in _palette_laws(source) if law.degenerate]
    if bad:
        raise HypothesisViolation(
            f"hypothesis '{HYP_NONDEGENERATE}' fails: {bad[0]!r} is a point mass")


def _residual_tail(env, generation):
    series = limits.delta2_partial(env)
    return series.tail_from(generation)


# -- rate regression --------------------------------------------------------------

RATE_STATISTICS = ("mean_abs", "mean_square", "median_abs")


def rate_statistics(n_values, w_n, w_hat):
    """Per-n rows of fluctuation statistics from matrices (reps x len(n_values))."""
    rows = []
    for j, n in enumerate(n_values):
        d = w_hat - w_n[:, j]
        a = np.abs(d)
        reps = d.size
        rows.append({
            "n": int(n),
            "reps": int(reps),
            "mean": float(np.mean(d)),
            "variance": float(np.var(d, ddof=1)) if reps > 1 else 0.0,
            "mean_abs": float(np.mean(a)),
            "mean_abs_se": float(np.std(a, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
            "mean_square": float(np.mean(d * d)),
            "mean_square_se": float(np.std(d * d, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
            "median_abs": float(np.median(a)),
        })
    return rows


def assess_rate(rep, n_values, values, target, statistic, tolerance, sided):
    """Slope or monotonicity checks on precomputed per-n statistics.

    Separated from the simulation so it can be fed exact synthetic input.
    """
    n_values = np.asarray(n_values, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        raise CampaignInvalid("rate statistics must be positive to take logarithms")
    logs = np.log(values)
    if target.kind == "exponential":
        slope, icept, se = fit_line(n_values, logs)
        want = target.slope(statistic)
        rep.fits["log_statistic_vs_n"] = {"slope": slope, "intercept": icept, "stderr": se,
                                          "target_slope": want, "statistic": statistic}
        margin = tolerance * abs(want)
        if sided == "one":
            rep.add_check("slope_at_least_target_rate", slope, want + margin, "<=",
                          slope <= want + margin, "tolerance")
        else:
            rep.add_check("slope_within_tolerance", abs(slope - want), margin, "<=",
                          abs(slope - want) <= margin, "tolerance")
        return slope
    slope, icept, se = fit_line(np.log(n_values), logs)
    rep.fits["log_statistic_vs_log_n"] = {"slope": slope, "intercept": icept, "stderr": se,
                                          "statistic": statistic}
    scaled = {int(n): float(n ** target.alpha * v) for n, v in zip(n_values, values)}
    top = top_half([int(n) for n in n_values])
    seq = [scaled[n] for n in top]
    rep.fits["scaled_statistic"] = scaled
    worst = max((b / a for a, b in zip(seq, seq[1:])), default=0.0)
    rep.add_check("n_alpha_median_decreasing_top_half", worst, 1.0, "<",
                  strictly_decreasing(seq), "trend_ratio_max",
                  label="heuristic: median decay as a surrogate for the almost-sure rate")
    return slope


def rate_from_statistics(n_values, values, target, statistic="mean_abs", tolerance=0.1,
                         sided="one"):
    """Rate check on given statistics, with no simulation."""
    config = {"campaign": "rate", "input": "synthetic", "n_values": list(map(int, n_values)),
              "target": target.to_dict(), "statistic": statistic, "tolerance": tolerance,
              "sided": sided, "trend_ratio_max": 1.0}
    rep, t0 = _start("rate", config)
    rep.stats = [{"n": int(n), statistic: float(v)} for n, v in zip(n_values, values)]
    assess_rate(rep, n_values, values, target, statistic, tolerance, sided)
    return _finish(rep, t0)


def series_heuristic(w_hat, w_path, paths=100):
    """Boundedness and Cauchy-like settling of partial sums of (W_hat - W_n).

    ``w_path`` holds W_0..W_M column-wise. Returns a dict with the largest
    partial sum and the median relative movement over the last quarter.
    """
    d = w_hat[:paths, None] - w_path[:paths]
    s = np.cumsum(d, axis=1)
    m = s.shape[1]
    q = max(m - max(m // 4, 1), 0)
    scale = np.max(np.abs(s), axis=1)
    move = np.max(np.abs(s[:, q:] - s[:, -1:]), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, move / scale, 0.0)
    return {"paths": int(d.shape[0]), "terms": int(m), "max_abs_partial_sum": float(np.max(scale)),
            "median_late_relative_movement": float(np.median(rel))}


def check_rate(model, target, n_range, reps, depth, seed, *, statistic=None, tolerance=0.1,
               sided="one", env_seed=0, series_paths=100, series_terms=30,
               series_tolerance=0.05, validity_fraction=VALIDITY_FRACTION):
    """Regress fluctuation size on n and compare with the target rate.

    Runs quenched under one environment (``model`` itself, or a model
    realized with ``env_seed``). W_hat is W_{max(n) + depth} from the same
    trajectory. For exponential targets the slope of log(statistic) on n is
    compared with the target; for polynomial targets n**alpha times the
    median of |W_hat - W_n| must decrease over the top half of the n-range.
    """
    n_values = sorted(int(n) for n in n_range)
    if len(n_values) < 2 or n_values[0] < 0:
        raise ValueError("n_range needs at least two nonnegative values")
    if reps < 1000:
        raise ValueError("check_rate needs reps >= 1000")
    if statistic is None:
        statistic = "mean_abs" if target.kind == "exponential" else "median_abs"
    if statistic not in RATE_STATISTICS:
        raise ValueError(f"statistic must be one of {RATE_STATISTICS}")
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    target = target.with_a(_mean_log_m(model))
    total = n_values[-1] + int(depth)
    config = {"campaign": "rate", "target": target.to_dict(), "n_values": n_values,
              "reps": int(reps), "depth": int(depth), "seed": int(seed),
              "env_seed": int(env_seed), "statistic": statistic, "tolerance": tolerance,
              "sided": sided, "validity_fraction": validity_fraction, "trend_ratio_max": 1.0,
              "series_tolerance": series_tolerance, "mode": "quenched"}
    rep, t0 = _start("rate", config)
    env = _environment(model, total + 1, env_seed)
    series_m = min(series_terms, total - 1) if target.kind == "polynomial" else -1
    records = sorted(set(n_values) | set(range(series_m + 1)) | {total})
    batch = engine.run_replicates(env, total, records, reps, sub_seed(seed, TAG_TRAJ))
    cols = [batch.column(n) for n in n_values]
    w_hat = batch.w[:, -1]
    rows = rate_statistics(n_values, batch.w[:, cols], w_hat)
    rep.stats = rows
    rep.samples = {f"dW_n{n}": w_hat - batch.w[:, c] for n, c in zip(n_values, cols)}
    rep.provenance.update({"traj_seed_base": sub_seed(seed, TAG_TRAJ), "env_seed": int(env_seed)})
    rep.notes.append("rates are probed through " + statistic.replace("_", " ")
                     + " of |W_hat - W_n|, a surrogate for the almost-sure statement")
    values = [r[statistic] for r in rows]
    if all(r["mean_abs"] == 0.0 for r in rows):
        rep.degenerate = True
        rep.notes.append("all fluctuations are zero: the environment is degenerate")
        return _finish(rep, t0)
    resid = _residual_tail(env, total)
    scale = min(math.sqrt(v) if statistic == "mean_square" else v for v in values)
    rep.fits["residual_variance_bound"] = resid
    rep.add_check("estimator_residual_rms_vs_scale", math.sqrt(resid) / scale,
                  validity_fraction, "<=", math.sqrt(resid) <= validity_fraction * scale,
                  "validity_fraction")
    if math.sqrt(resid) > validity_fraction * scale:
        raise CampaignInvalid(
            f"residual rms {math.sqrt(resid):.3g} of W_hat exceeds {validity_fraction:g} of the "
            f"smallest fluctuation scale {scale:.3g}; increase depth")
    assess_rate(rep, n_values, values, target, statistic, tolerance, sided)
    if series_m > 0:
        cols_path = [batch.column(k) for k in range(series_m + 1)]
        h = series_heuristic(w_hat, batch.w[:, cols_path], series_paths)
        rep.fits["series_convergence"] = h
        rep.add_check("series_partial_sums_settle", h["median_late_relative_movement"],
                      series_tolerance, "<=",
                      h["median_late_relative_movement"] <= series_tolerance,
                      "series_tolerance", informational=True, label="heuristic")
    return _finish(rep, t0)


# -- mixed-normal limit ----------------------------------------------------------------

def _u_sample_annealed(model, n, reps, depth, seed, env_seed, tail_pad, validity_fraction):
    total = n + depth
    horizon = total + tail_pad
    batch = engine.run_replicates(model, total, [n, total], reps, seed, mode="annealed",
                                  env_seed=env_seed, env_horizon=horizon, keep_states=True)
    d_n = limits.delta2_shifted_rows(batch.palette, batch.states, n)
    d_total = limits.delta2_shifted_rows(batch.palette, batch.states, total)
    logm = np.array([math.log(law.mean) for law in batch.palette])
    gain = np.sum(logm[batch.states[:, n:total]], axis=1)
    noise = np.max(d_total * np.exp(-0.5 * gain) / d_n)
    lp = batch.log_p[:, 0]
    u = np.exp(0.5 * lp) * (batch.w[:, 1] - batch.w[:, 0]) / d_n
    return u, float(noise)


def _u_sample_quenched(env, n, reps, depth, seed):
    pairs = engine.sample_fluctuation(env, n, depth, reps, seed)
    u = limits.u_statistic(env, n, pairs[:, 0], pairs[:, 0] + pairs[:, 1])
    resid = _residual_tail(env, n + depth)
    noise = math.sqrt(math.exp(limits.log_Pn(env, n)) * resid) / limits.delta2_shifted(env, n)
    return u, noise


def check_clt(model, n_list, reps, depth, seed, mode="annealed", *, env_reps=20, env_seed=0,
              alpha=0.01, limit_depth=None, ks_final_max=None, tail_pad=200,
              validity_fraction=VALIDITY_FRACTION):
    """Two-sample KS distance between U_n and a sample of G sqrt(W).

    U_n = sqrt(P_n) (W_hat - W_n) / delta_inf(T^n xi). In annealed mode each
    replicate has its own environment; in quenched mode the comparison is
    repeated over ``env_reps`` environments, each against the limit law
    under that same environment, and the KS distances are averaged. The
    limit sample uses W_{limit_depth} (default ``depth``) and a stream
    independent of the U sample.
    """
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ValueError("n_list is empty")
    if mode not in ("quenched", "annealed"):
        raise ValueError(f"unknown mode {mode!r}")
    _require_nondegenerate(model)
    limit_depth = int(limit_depth or depth)
    is_model = isinstance(model, EnvironmentModel)
    random_env = is_model and model.is_random
    if mode == "annealed" and not is_model:
        raise ValueError("annealed mode needs an EnvironmentModel")
    thr = ks_threshold(reps, reps, alpha)
    config = {"campaign": "clt", "mode": mode, "n_list": n_list, "reps": int(reps),
              "depth": int(depth), "limit_depth": limit_depth, "seed": int(seed),
              "env_seed": int(env_seed), "alpha": alpha, "ks_threshold": thr,
              "ks_critical_c": ks_critical(alpha), "validity_fraction": validity_fraction,
              "trend_ratio_max": 1.0}
    if ks_final_max is not None:
        config["ks_final_max"] = ks_final_max
    if mode == "quenched":
        config["env_reps"] = int(env_reps) if random_env else 1
    rep, t0 = _start("clt", config)
    horizon = max(n_list) + max(depth, limit_depth) + tail_pad
    ks_by_n = []
    noise_max = 0.0
    for i, n in enumerate(n_list):
        row = {"n": n, "reps_u": int(reps), "reps_limit": int(reps), "ks_threshold": thr}
        if mode == "annealed" and random_env:
            u, noise = _u_sample_annealed(model, n, reps, depth, sub_seed(seed, TAG_TRAJ, i),
                                          sub_seed(env_seed, TAG_ENV, i), tail_pad,
                                          validity_fraction)
            lim = limits.limit_law_sample(model, reps, limit_depth, sub_seed(seed, TAG_LIMIT, i),
                                          mode="annealed",
                                          env_seed=sub_seed(env_seed, TAG_LIMIT_ENV, i)).value
            ks = ks_distance(u, lim)
            rep.samples[f"U_n{n}"] = u
            rep.samples[f"limit_n{n}"] = lim
            row.update({"ks": ks, "u_mean": float(np.mean(u)), "u_variance": float(np.var(u))})
            noise_max = max(noise_max, noise)
        else:
            envs = config.get("env_reps", 1)
            vals = []
            for e in range(envs):
                env = _environment(model, horizon, sub_seed(env_seed, TAG_QENV, e)
                                   if random_env else env_seed)
                u, noise = _u_sample_quenched(env, n, reps, depth, sub_seed(seed, TAG_TRAJ, i * 100_003 + e))
                lim = limits.limit_law_sample(env, reps, limit_depth,
                                              sub_seed(seed, TAG_LIMIT, i * 100_003 + e)).value
                vals.append(ks_distance(u, lim))
                if e == 0:
                    rep.samples[f"U_n{n}"] = u
                    rep.samples[f"limit_n{n}"] = lim
                noise_max = max(noise_max, noise)
            ks = float(np.mean(vals))
            row.update({"ks": ks, "ks_min": float(np.min(vals)), "ks_max": float(np.max(vals)),
                        "environments": envs})
            if envs > 1:
                row["ks_per_environment"] = vals
        ks_by_n.append(ks)
        rep.stats.append(row)
    rep.fits["estimator_noise_max"] = noise_max
    rep.add_check("estimator_residual_rms_vs_u_scale", noise_max, validity_fraction, "<=",
                  noise_max <= validity_fraction, "validity_fraction")
    if noise_max > validity_fraction:
        raise CampaignInvalid(f"W_hat residual is {noise_max:.3g} of the U_n scale; increase depth")
    if len(n_list) > 1:
        worst = max(b / a if a > 0 else math.inf for a, b in zip(ks_by_n, ks_by_n[1:]))
        rep.add_check("ks_decreasing_in_n", worst, 1.0, "<", strictly_decreasing(ks_by_n),
                      "trend_ratio_max")
    rep.add_check("final_ks_below_rejection_threshold", ks_by_n[-1], thr, "<", ks_by_n[-1] < thr,
                  "ks_threshold", informational=ks_final_max is not None)
    if ks_final_max is not None:
        rep.add_check("final_ks_below_max", ks_by_n[-1], ks_final_max, "<",
                      ks_by_n[-1] < ks_final_max, "ks_final_max")
    return _finish(rep, t0)


def limit_self_consistency(model, reps, depth, seed, trials=100, alpha=0.01, env_seed=0):
    """Fraction of trials in which two independent limit samples pass the KS test."""
    thr = ks_threshold(reps, reps, alpha)
    mode = "annealed" if isinstance(model, EnvironmentModel) and model.is_random else "quenched"
    passed = 0
    values = []
    for k in range(trials):
        a = limits.limit_law_sample(model, reps, depth, sub_seed(seed, TAG_LIMIT, 2 * k), mode,
                                    sub_seed(env_seed, TAG_LIMIT_ENV, 2 * k)).value
        b = limits.limit_law_sample(model, reps, depth, sub_seed(seed, TAG_LIMIT, 2 * k + 1), mode,
                                    sub_seed(env_seed, TAG_LIMIT_ENV, 2 * k + 1)).value
        d = ks_distance(a, b)
        values.append(d)
        passed += d < thr
    return passed / trials, values


# -- supergeometric tails ----------------------------------------------------------------

def assess_tail(rep, n_values, p_hat, reps, m_lower, tolerance, alpha, censored=None, label=""):
    """Shape checks on tail frequencies for one epsilon.

    y(n) = log(-log p_hat) must increase with mean increment at least
    (1 - tolerance) log(m_lower) / 3, and a pure geometric fit (log p_hat
    linear in n, weighted by binomial variances) must fail a chi-square
    lack-of-fit test at level ``alpha``. Censored points (zero counts) and
    p_hat = 1 are left out. Returns the supergeometric flag.
    """
    n_values = np.asarray(n_values, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if censored is None:
        censored = np.zeros(p_hat.size, dtype=bool)
    use = (~np.asarray(censored)) & (p_hat > 0) & (p_hat < 1)
    suffix = f"[{label}]" if label else ""
    need = (1.0 - tolerance) * math.log(m_lower) / 3.0
    if use.sum() < 3:
        rep.add_check("tail_points_available" + suffix, int(use.sum()), 3, ">=", False,
                      "min_tail_points")
        return False
    n = n_values[use]
    p = p_hat[use]
    y = np.log(-np.log(p))
    inc = np.diff(y)
    mean_inc = float(np.mean(inc))
    increasing = bool(np.all(inc > 0))
    var = (1.0 - p) / (reps * p)
    wts = 1.0 / var
    lp = np.log(p)
    X = np.column_stack([np.ones_like(n), n])
    W = np.diag(wts)
    beta = np.linalg.solve(X.T @ W @ X, X.T @ W @ lp)
    chi2 = float(np.sum(wts * (lp - X @ beta) ** 2))
    dof = int(n.size - 2)
    pval = float(stats.chi2.sf(chi2, dof)) if dof > 0 else 1.0
    rejected = dof > 0 and pval < alpha
    rep.fits["tail" + suffix] = {"n": n.tolist(), "y": y.tolist(), "increments": inc.tolist(),
                                 "mean_increment": mean_inc, "required_increment": need,
                                 "geometric_fit": {"intercept": float(beta[0]),
                                                   "slope": float(beta[1]), "chi2": chi2,
                                                   "dof": dof, "p_value": pval}}
    rep.add_check("y_increasing" + suffix, float(np.min(inc)), 0.0, ">", increasing,
                  "y_increment_min")
    rep.add_check("y_mean_increment" + suffix, mean_inc, need, ">=", mean_inc >= need,
                  "required_increment")
    rep.add_check("geometric_fit_rejected" + suffix, pval, alpha, "<", rejected, "alpha")
    return increasing and mean_inc >= need and rejected


def tail_from_probabilities(n_values, p, reps, m_lower, tolerance=0.25, alpha=0.01):
    """Tail-shape check on given probabilities (no simulation).

    ``p`` plays the role of observed frequencies over ``reps`` trials.
    """
    config = {"campaign": "tail", "input": "synthetic", "n_values": list(map(int, n_values)),
              "reps": int(reps), "m_lower": m_lower, "tolerance": tolerance, "alpha": alpha,
              "required_increment": (1.0 - tolerance) * math.log(m_lower) / 3.0,
              "y_increment_min": 0.0, "min_tail_points": 3}
    rep, t0 = _start("tail", config)
    rep.stats = [{"n": int(n), "p_hat": float(q)} for n, q in zip(n_values, p)]
    flag = assess_tail(rep, n_values, p, reps, m_lower, tolerance, alpha)
    rep.fits["supergeometric"] = flag
    return _finish(rep, t0)


def check_tail(model, n_list, eps_list, reps, depth, seed, *, tolerance=0.25, alpha=0.01,
               env_seed=0, validity_fraction=VALIDITY_FRACTION):
    """Frequencies of |W_hat - W_n| > eps and their supergeometric shape.

    Annealed for random models. Passes when every epsilon shows increasing
    y(n) = log(-log p_hat) with the required mean increment and a rejected
    geometric fit. The epsilon-exponent fit is informational.
    """
    if not isinstance(model, EnvironmentModel):
        raise ValueError("check_tail needs an EnvironmentModel")
    if not model.finite_state:
        raise HypothesisViolation(f"hypothesis '{HYP_FINITE}' fails")
    if not model.strongly_supercritical:
        raise HypothesisViolation(f"hypothesis '{HYP_STRONG}' fails")
    if not model.nondegenerate:
        raise HypothesisViolation(f"hypothesis '{HYP_P1}' fails")
    n_list = sorted(int(n) for n in n_list)
    eps_list = [float(e) for e in eps_list]
    m_lower = model.essinf_mean()
    total = n_list[-1] + int(depth)
    need = (1.0 - tolerance) * math.log(m_lower) / 3.0
    mode = "annealed" if model.is_random else "quenched"
    config = {"campaign": "tail", "mode": mode, "n_list": n_list, "eps_list": eps_list,
              "reps": int(reps), "depth": int(depth), "seed": int(seed), "env_seed": int(env_seed),
              "tolerance": tolerance, "alpha": alpha, "m_lower": m_lower,
              "required_increment": need, "y_increment_min": 0.0, "min_tail_points": 3,
              "validity_fraction": validity_fraction, "ci_level": 0.95,
              "min_expected_count": 20}
    rep, t0 = _start("tail", config)
    # worst case over environments of the residual variance after `total` generations
    ratios = limits.variance_ratios(model._possible())
    bound = float(np.max(ratios)) * m_lower ** (-total) / (1.0 - 1.0 / m_lower)
    rep.fits["residual_variance_bound"] = bound
    ok = math.sqrt(bound) <= validity_fraction * min(eps_list)
    rep.add_check("estimator_residual_rms_vs_eps", math.sqrt(bound) / min(eps_list),
                  validity_fraction, "<=", ok, "validity_fraction")
    if not ok:
        raise CampaignInvalid("W_hat residual is too large relative to the smallest epsilon")
    batch = engine.run_replicates(model, total, n_list + [total], reps, sub_seed(seed, TAG_TRAJ),
                                  mode=mode, env_seed=sub_seed(env_seed, TAG_ENV))
    w_hat = batch.w[:, -1]
    all_flags = []
    counts = {}
    for n in n_list:
        d = np.abs(w_hat - batch.w[:, batch.column(n)])
        rep.samples[f"absdW_n{n}"] = d
        for eps in eps_list:
            counts[(n, eps)] = int(np.count_nonzero(d > eps))
    for eps in eps_list:
        phat, cens = [], []
        for n in n_list:
            c = counts[(n, eps)]
            lo, hi = wilson_interval(c, reps)
            row = {"n": n, "eps": eps, "count": c, "reps": int(reps), "p_hat": c / reps,
                   "ci_low": lo, "ci_high": hi, "censored": c == 0}
            if c == 0:
                row["p_upper_bound"] = hi
                row["y_lower_bound"] = math.log(-math.log(hi))
            elif c < reps:
                row["y"] = math.log(-math.log(c / reps))
            if c < config["min_expected_count"]:
                row["low_count"] = True
            rep.stats.append(row)
            phat.append(c / reps)
            cens.append(c == 0)
        if cens[-1]:
            rep.notes.append(f"eps={eps:g}: zero exceedances at n={n_list[-1]}; "
                             "reported as a censored bound")
        flag = assess_tail(rep, n_list, phat, reps, m_lower, tolerance, alpha, cens,
                           label=f"eps={eps:g}")
        rep.fits[f"supergeometric[eps={eps:g}]"] = flag
        all_flags.append(flag)
    # epsilon exponent: slope of y against log eps, expected 2/3
    if len(eps_list) > 1:
        expo = {}
        for n in n_list:
            pts = [(math.log(e), math.log(-math.log(counts[(n, e)] / reps))) for e in eps_list
                   if 0 < counts[(n, e)] < reps]
            if len(pts) >= 2:
                x, y = zip(*pts)
                expo[n] = fit_line(x, y)[0]
        rep.fits["eps_exponent"] = expo
        if expo:
            med = float(np.median(list(expo.values())))
            rep.add_check("eps_exponent_median", med, 2.0 / 3.0, "~", True, "eps_exponent_expected",
                          informational=True, label="informational")
            config["eps_exponent_expected"] = 2.0 / 3.0
    rep.fits["supergeometric"] = bool(all_flags) and all(all_flags)
    return _finish(rep, t0)


# -- exponential moments -------------------------------------------------------------

def _state_prefixes(model, n_cap, env_seed):
    """One environment per state, starting in that state."""
    if isinstance(model, EnvironmentSequence):
        return [("given", model)]
    if not model.finite_state:
        raise HypothesisViolation(f"hypothesis '{HYP_FINITE}' fails")
    if not model.is_random:
        return [("constant", realize(model, n_cap, env_seed))]
    out = []
    n = len(model.laws)
    for i, law in enumerate(model.laws):
        if law not in model._possible():
            continue
        if model.kind == "iid":
            rest = realize(model, n_cap, sub_seed(env_seed, TAG_QENV, i)).index.copy()
        else:
            init = np.zeros(n)
            init[i] = 1.0
            _, trans = model.kernel_cdfs()
            idx = np.empty(n_cap, dtype=np.int32)
            K.realize_states(np.cumsum(init), trans, n_cap, as_seed(sub_seed(env_seed, TAG_QENV, i)), idx)
            rest = idx
        rest[0] = i
        out.append((f"state{i}", EnvironmentSequence(model.laws, rest, model, env_seed)))
    return out


def check_exp_moment(model, t_grid, n_cap, *, mc_t=None, mc_reps=100_000, mc_depth=25, seed=0,
                     env_seed=0, rtol=1e-9, window=5, se_multiple=3.0, value_checks=None,
                     expect_divergent=()):
    """Stability of psi_n(t) = E_xi exp(t W_n) over a grid of t.

    Each environment state is used as the first generation of a prefix
    environment. A point is stable when psi_n(t) settles by ``n_cap``,
    divergent when the recursion leaves a radius of convergence. The
    labels must be monotone in t. ``mc_t`` adds a Monte Carlo comparison
    of the mean of exp(t W_{mc_depth}) with psi_{mc_depth}(t).
    ``value_checks`` maps t to (expected value, absolute tolerance);
    ``expect_divergent`` lists t values that must classify as divergent.
    """
    t_grid = sorted(float(t) for t in t_grid)
    n_cap = min(int(n_cap), limits.MAX_MGF_DEPTH)
    config = {"campaign": "mgf", "t_grid": t_grid, "n_cap": n_cap, "rtol": rtol,
              "window": window, "mc_t": mc_t, "mc_reps": int(mc_reps), "mc_depth": int(mc_depth),
              "seed": int(seed), "env_seed": int(env_seed), "se_multiple": se_multiple}
    if expect_divergent:
        config["expect_divergent"] = [float(t) for t in expect_divergent]
    if value_checks:
        config["value_checks"] = {str(k): list(v) for k, v in value_checks.items()}
    rep, t0 = _start("mgf", config)
    prefixes = _state_prefixes(model, max(n_cap, mc_depth) + 1, env_seed)
    labels = []
    for t in t_grid:
        row = {"t": t}
        per = []
        for name, env in prefixes:
            lab, val = limits.classify_mgf(env, t, n_cap, rtol, window)
            row[f"label[{name}]"] = lab
            row[f"psi[{name}]"] = val
            per.append(lab)
        if "divergent" in per:
            lab = "divergent"
        elif all(x == "stable" for x in per):
            lab = "stable"
        else:
            lab = "unresolved"
        row["label"] = lab
        labels.append(lab)
        rep.stats.append(row)
    # frontier: nothing stable above a divergent point
    first_div = next((i for i, x in enumerate(labels) if x == "divergent"), None)
    monotone = first_div is None or "stable" not in labels[first_div:]
    rep.add_check("stable_divergent_monotone_in_t", int(not monotone), 0, "==", monotone,
                  "monotone_violations_allowed")
    config["monotone_violations_allowed"] = 0
    if not monotone:
        raise CampaignInvalid(f"stable point above a divergent one on t_grid: {labels}")
    stable_t = [t for t, x in zip(t_grid, labels) if x == "stable"]
    div_t = [t for t, x in zip(t_grid, labels) if x == "divergent"]
    t_ok = max(stable_t) if stable_t else 0.0
    t_div = min(div_t) if div_t else math.inf
    rep.fits["radius_interval_grid"] = [t_ok, t_div]
    if t_grid:
        brackets = [limits.mgf_radius(env, max(t_grid), n_cap) for _, env in prefixes]
        rep.fits["radius_interval_bisection"] = [min(b[0] for b in brackets),
                                                 min(b[1] for b in brackets)]
    for t, (want, tol) in (value_checks or {}).items():
        t = float(t)
        vals = [limits.classify_mgf(env, t, n_cap, rtol, window) for _, env in prefixes]
        got = vals[0][1]
        ok = all(v[0] == "stable" for v in vals) and abs(got - want) <= tol
        rep.add_check(f"psi_value_at_t={t:g}", abs(got - want), tol, "<=", ok,
                      f"value_checks.{t:g}")
    for t in expect_divergent:
        labs = [limits.classify_mgf(env, float(t), n_cap, rtol, window)[0] for _, env in prefixes]
        rep.add_check(f"divergent_at_t={float(t):g}", int("divergent" in labs), 1, "==",
                      "divergent" in labs, "expect_divergent")
    if stable_t:
        rep.add_check("some_t_stable", t_ok, 0.0, ">=", True, "t_grid")
    if mc_t is not None:
        name, env = prefixes[0]
        psi = limits.quenched_mgf(env, mc_t, mc_depth)
        batch = engine.run_replicates(env, mc_depth, [mc_depth], mc_reps, sub_seed(seed, TAG_MC))
        vals = np.exp(mc_t * batch.w[:, 0])
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(mc_reps))
        rep.fits["monte_carlo"] = {"t": mc_t, "prefix": name, "mean": mean, "se": se,
                                   "psi_exact": psi, "depth": mc_depth}
        rep.add_check("monte_carlo_within_se", abs(mean - psi) / se if se > 0 else 0.0,
                      se_multiple, "<=", abs(mean - psi) <= se_multiple * se, "se_multiple")
    return _finish(rep, t0)


# -- sampler calibration -------------------------------------------------------------------

def sampler_equivalence(laws, z_values, draws=10_000, seed=0, alpha=0.01):
    """Two-sample KS between the convolution sampler and explicit sums.

    Returns a list of (law, z, ks, threshold, rejected).
    """
    out = []
    thr = ks_threshold(draws, draws, alpha)
    for li, law in enumerate(laws):
        fam, par, lo, hi, fvals, ftail, fcond = LawTable([law]).block(0)
        for z in z_values:
            fast = K.totals_many(as_seed(sub_seed(seed, 11, li * 1000 + z)), fam, par, lo, hi,
                                 fvals, ftail, fcond, np.int64(z), draws, np.int64(1 << 62))
            slow = K.naive_many(as_seed(sub_seed(seed, 12, li * 1000 + z)), fam, par, lo, hi,
                                fvals, ftail, np.int64(z), draws)
            d = ks_distance(fast, slow)
            out.append((law, int(z), d, thr, d >= thr))
    return out


def calibration(seed=0, instances=100, sampler_draws=10_000, z_values=range(1, 51)):
    """Mechanism checks that need no theorem: synthetic inputs and sampler equivalence."""
    from .offspring import finite, geometric_shifted, poisson
    z_values = list(z_values)
    config = {"campaign": "calibrate", "seed": int(seed), "instances": int(instances),
              "sampler_draws": int(sampler_draws), "z_values": [min(z_values), max(z_values)],
              "slope_abs_tol": 1e-12, "false_flags_allowed": 0}
    rep, t0 = _start("calibrate", config)
    ns = np.arange(4, 15)
    r = rate_from_statistics(ns, 2.0 ** (-ns / 2.0), RateTarget.exponential(2.0, math.log(2.0)),
                             "mean_abs", sided="two")
    slope = r.fits["log_statistic_vs_n"]["slope"]
    err = abs(slope + math.log(2.0) / 2.0)
    rep.add_check("synthetic_rate_slope_error", err, 1e-12, "<=", err <= 1e-12, "slope_abs_tol")
    rng = np.random.default_rng(seed)
    false_flags = 0
    for _ in range(instances):
        rate = rng.uniform(0.2, 1.5)
        c = rng.uniform(0.05, 0.9)
        start = int(rng.integers(1, 5))
        n = np.arange(start, start + int(rng.integers(5, 10)))
        m_lower = rng.uniform(1.05, 3.0)
        p = c * np.exp(-rate * n)
        t = tail_from_probabilities(n, p, 10 ** int(rng.integers(5, 8)), m_lower)
        false_flags += bool(t.fits["supergeometric"])
    rep.add_check("synthetic_geometric_flagged", false_flags, 0, "<=", false_flags == 0,
                  "false_flags_allowed")
    sup = tail_from_probabilities(np.arange(2, 11), np.exp(-2.0 ** (np.arange(2, 11) / 3.0)),
                                  10 ** 6, 2.0)
    rep.add_check("synthetic_supergeometric_flagged", int(sup.fits["supergeometric"]), 1, "==",
                  sup.fits["supergeometric"], "expected_flag")
    config["expected_flag"] = 1
    laws = [poisson(0.7), poisson(2.0), geometric_shifted(0.5),
            finite({0: 0.2, 1: 0.3, 3: 0.5}),
            finite({1: 0.5, 2: 0.25, 5: 0.125, 40: 0.125})]
    res = sampler_equivalence(laws, z_values, sampler_draws, seed)
    rejections = sum(x[4] for x in res)
    # 1% nominal rate plus three binomial standard deviations
    allowed = int(math.floor(len(res) * (0.01 + 3.0 * math.sqrt(0.01 * 0.99 / len(res)))))
    config["sampler_rejections_allowed"] = allowed
    rep.stats = [{"law": repr(x[0]), "z": x[1], "ks": x[2], "ks_threshold": x[3],
                  "rejected": bool(x[4])} for x in res]
    rep.add_check("sampler_ks_rejections", rejections, allowed, "<=", rejections <= allowed,
                  "sampler_rejections_allowed")
    return _finish(rep, t0)


def check_clt_repeated(model, n_list, reps, depth, seed, mode="quenched", *, repeats=20,
                       min_pass_fraction=0.95, **kw):
    """Run :func:`check_clt` ``repeats`` times and count passing campaigns.

    Repeat k uses seed mix(seed, k) and environment seed mix(env_seed, k).
    """
    config = {"campaign": "clt", "repeats": int(repeats), "min_pass_fraction": min_pass_fraction,
              "seed": int(seed), "n_list": [int(n) for n in n_list], "reps": int(reps),
              "depth": int(depth), "mode": mode}
    rep, t0 = _start("clt", config)
    env_seed = kw.pop("env_seed", 0)
    passes = 0
    for k in range(repeats):
        r = check_clt(model, n_list, reps, depth, mix(seed, k), mode,
                      env_seed=mix(env_seed, k), **kw)
        if k == 0:
            config.update({a: b for a, b in r.config.items() if a not in config})
        passes += r.passed
        rep.stats.append({"repeat": k, "seed": mix(seed, k), "ks": r.stats[-1]["ks"],
                          "ks_threshold": r.stats[-1]["ks_threshold"], "passed": r.passed})
    frac = passes / repeats
    rep.fits["pass_fraction"] = frac
    rep.add_check("campaign_pass_fraction", frac, min_pass_fraction, ">=",
                  frac >= min_pass_fraction, "min_pass_fraction")
    return _finish(rep, t0)
