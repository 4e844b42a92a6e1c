"""Command-line front end: ``bpre run``, ``bpre presets``, ``bpre validate``.

Exit status of ``run``: 0 when every check passes, 2 when a check fails,
1 on a configuration or execution error.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from . import engine, limits, verify
from .env import model_from_spec, realize
from .errors import BpreError, HypothesisViolation
from .offspring import DEFAULT_CAP

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def _fmt(x):
    return format(float(x), ".17g")


def write_samples_csv(path, columns):
    """Columns of equal length as ``rep,<name>,...`` rows."""
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    n = min(a.size for a in arrays) if arrays else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep"] + names)
        for r in range(n):
            w.writerow([r] + [_fmt(a[r]) for a in arrays])


def _n_values(params):
    if "n_list" in params:
        return sorted(params["n_list"])
    a, b = params["n_range"]
    return list(range(a, b + 1))


def _target(params):
    t = params["target"]
    if t["kind"] == "exponential":
        return verify.RateTarget.exponential(t.get("p", 2.0), t.get("a"))
    return verify.RateTarget.polynomial(t.get("alpha", 1.0), t.get("a"))


# -- campaigns ------------------------------------------------------------------------

def _simulate(cfg, model, params, seeds, outdir, files):
    n = params["n"]
    reps = params.get("reps", 1)
    depth = params.get("depth")
    cap = params.get("cap", DEFAULT_CAP)
    env = realize(model, n + (depth or 0) + 1, seeds["env_seed"])
    out = cfg.get("output", {})
    if reps == 1:
        conf = {"campaign": "simulate", "n": n, "cap": cap, "traj_seed": seeds["traj_seed"],
                "env_seed": seeds["env_seed"], "depth": depth}
        rep, t0 = verify._start("simulate", conf)
        tr = engine.simulate(env, n, seeds["traj_seed"], cap)
        rep.stats = [{"k": k, "Z": int(z), "logP": float(lp), "W": float(w)}
                     for k, (z, lp, w) in enumerate(zip(tr.z, tr.log_p, tr.w))]
        rep.add_check("generations_completed", tr.n, n, "==", not tr.capped, "n")
        if depth and not tr.capped:
            est = engine.estimate_W(env, tr, depth, cap)
            rep.fits["W_hat"] = {"value": est.value, "base_generation": est.base_generation,
                                 "extra_depth": est.extra_depth,
                                 "residual_variance_bound": est.residual_variance_bound}
        if out.get("trajectory", True):
            path = os.path.join(outdir, "trajectory.csv")
            tr.to_csv(path)
            files.append(path)
        return verify._finish(rep, t0)
    depth = depth or engine.DEFAULT_DEPTH
    se_k = params.get("se_multiple", 3.0)
    vtol = params.get("variance_tolerance", 0.05)
    conf = {"campaign": "simulate", "n": n, "reps": reps, "depth": depth,
            "traj_seed": seeds["traj_seed"], "env_seed": seeds["env_seed"],
            "se_multiple": se_k, "variance_tolerance": vtol}
    rep, t0 = verify._start("simulate", conf)
    pairs = engine.sample_fluctuation(env, n, depth, reps, seeds["traj_seed"])
    d = pairs[:, 1]
    mean = float(np.mean(d))
    se = float(np.std(d, ddof=1) / math.sqrt(reps))
    var = float(np.var(d, ddof=1))
    series = limits.delta2_partial(env)
    expected = series.tail_from(n)
    rep.stats = [{"n": n, "reps": reps, "mean": mean, "se": se, "variance": var,
                  "expected_variance": expected, "variance_ratio": var / expected}]
    rep.add_check("mean_within_se", abs(mean) / se if se > 0 else 0.0, se_k, "<=",
                  abs(mean) <= se_k * se, "se_multiple")
    rep.add_check("variance_relative_error", abs(var / expected - 1.0), vtol, "<=",
                  abs(var / expected - 1.0) <= vtol, "variance_tolerance")
    rep.notes.append("expected variance is the variance-series tail from n, "
                     "the quenched E(W - W_n)^2")
    rep.samples = {"Wn": pairs[:, 0], "dW": d}
    return verify._finish(rep, t0)


def _delta(cfg, models, params, seeds):
    horizon = params.get("horizon", 2000)
    expected = params.get("expected")
    tol = params.get("rel_tol", 1e-9)
    conf = {"campaign": "delta", "horizon": horizon, "env_seed": seeds["env_seed"],
            "rel_tol": tol, "expected": expected}
    rep, t0 = verify._start("delta", conf)
    if expected is not None and len(expected) != len(models):
        raise cfgmod.ConfigError("params.expected must have one value per model")
    for i, model in enumerate(models):
        env = realize(model, horizon, seeds["env_seed"])
        s = limits.delta2_partial(env)
        row = {"model": i, "value": s.value, "converged": s.converged,
               "truncation_index": s.truncation_index, "degenerate": s.degenerate}
        rep.stats.append(row)
        rep.add_check(f"converged[{i}]", s.truncation_index, horizon, "<", s.converged, "horizon")
        if expected is not None:
            err = abs(s.value - expected[i]) / abs(expected[i]) if expected[i] else abs(s.value)
            row["relative_error"] = err
            rep.add_check(f"value_matches_expected[{i}]", err, tol, "<=", err <= tol, "rel_tol")
    rep.fits["value"] = rep.stats[0]["value"] if len(models) == 1 else [r["value"] for r in rep.stats]
    return verify._finish(rep, t0)


def _extinction(cfg, models, params, seeds):
    depth = params["depth"]
    inc_tol = params.get("increment_tol", 1e-10)
    expected = params.get("expected")
    tol = params.get("rel_tol", 1e-9)
    conf = {"campaign": "extinction", "depth": depth, "env_seed": seeds["env_seed"],
            "increment_tol": inc_tol, "expected": expected, "rel_tol": tol}
    rep, t0 = verify._start("extinction", conf)
    for i, model in enumerate(models):
        env = realize(model, depth, seeds["env_seed"])
        est = limits.extinction_prob(env, depth)
        row = {"model": i, "value": est.value, "last_increment": est.std_error, "depth": depth}
        rep.stats.append(row)
        rep.add_check(f"composition_settled[{i}]", est.std_error, inc_tol, "<=",
                      est.std_error <= inc_tol, "increment_tol")
        if expected is not None:
            err = abs(est.value - expected[i]) / max(abs(expected[i]), 1e-300)
            rep.add_check(f"value_matches_expected[{i}]", err, tol, "<=", err <= tol, "rel_tol")
    rep.fits["value"] = rep.stats[0]["value"] if len(models) == 1 else [r["value"] for r in rep.stats]
    return verify._finish(rep, t0)


def run_config(cfg, outdir=None):
    """Validate and execute a resolved config; returns (report, written files).

    Raises ConfigError or BpreError on failure.
    """
    cfgmod.validate(cfg)
    camp = cfg["campaign"]
    params = cfg.get("params", {})
    seeds = cfg["seeds"]
    outdir = outdir or cfg.get("output", {}).get("dir") or os.path.join(
        "bpre-out", cfg.get("name", camp))
    os.makedirs(outdir, exist_ok=True)
    files = []
    try:
        if "models" in cfg:
            models = [model_from_spec(m) for m in cfg["models"]]
        elif "model" in cfg:
            models = [model_from_spec(cfg["model"])]
        else:
            models = []
    except (ValueError, TypeError) as exc:
        raise cfgmod.ConfigError(f"config invalid at model: {exc}")
    model = models[0] if models else None
    seed, env_seed = seeds["traj_seed"], seeds["env_seed"]
    if camp == "simulate":
        rep = _simulate(cfg, model, params, seeds, outdir, files)
    elif camp == "delta":
        rep = _delta(cfg, models, params, seeds)
    elif camp == "extinction":
        rep = _extinction(cfg, models, params, seeds)
    elif camp == "rate":
        kw = {k: params[k] for k in ("statistic", "tolerance", "sided", "validity_fraction")
              if k in params}
        rep = verify.check_rate(model, _target(params), _n_values(params), params["reps"],
                                params["depth"], seed, env_seed=env_seed, **kw)
    elif camp == "clt":
        kw = {k: params[k] for k in ("env_reps", "alpha", "limit_depth", "ks_final_max",
                                     "validity_fraction") if k in params}
        mode = params.get("mode", "annealed" if model.is_random else "quenched")
        if params.get("repeats", 1) > 1:
            rep = verify.check_clt_repeated(model, params["n_list"], params["reps"],
                                            params["depth"], seed, mode,
                                            repeats=params["repeats"],
                                            min_pass_fraction=params.get("min_pass_fraction", 0.95),
                                            env_seed=env_seed, **kw)
        else:
            rep = verify.check_clt(model, params["n_list"], params["reps"], params["depth"], seed,
                                   mode, env_seed=env_seed, **kw)
    elif camp == "tail":
        kw = {k: params[k] for k in ("tolerance", "alpha", "validity_fraction") if k in params}
        rep = verify.check_tail(model, params["n_list"], params["eps_list"], params["reps"],
                                params["depth"], seed, env_seed=env_seed, **kw)
    elif camp == "mgf":
        vc = {v["t"]: (v["value"], v["tol"]) for v in params.get("value_checks", [])}
        kw = {k: params[k] for k in ("mc_t", "mc_reps", "mc_depth", "se_multiple",
                                     "expect_divergent") if k in params}
        rep = verify.check_exp_moment(model, params["t_grid"], params["n_cap"], seed=seed,
                                      env_seed=env_seed, value_checks=vc or None, **kw)
    else:
        rep = verify.calibration(seed, params.get("instances", 100),
                                 params.get("sampler_draws", 10_000),
                                 range(1, params.get("z_max", 50) + 1))
    rep.config = dict(rep.config)
    rep.config["experiment"] = cfg
    path = os.path.join(outdir, "report.json")
    rep.write_json(path)
    files.append(path)
    path = os.path.join(outdir, "stats.csv")
    rep.write_stats_csv(path)
    files.append(path)
    if cfg.get("output", {}).get("samples") and rep.samples:
        path = os.path.join(outdir, "samples.csv")
        write_samples_csv(path, rep.samples)
        files.append(path)
    return rep, files


# -- argument handling ------------------------------------------------------------------

def _split_overrides(extra):
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise cfgmod.ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, text = body.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise cfgmod.ConfigError(f"override {tok!r} needs a value")
            key, text = body, extra[i + 1]
            i += 1
        out.append((key, cfgmod.parse_value(text)))
        i += 1
    return out


def _set_workers(n):
    import numba
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="bpre", description=(
        "Simulate branching processes in varying and random environments and run "
        "convergence checks on W_n = Z_n / P_n."))
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a campaign from a config file or preset",
                       epilog="Extra --dot.path=value flags override config leaves, "
                              "e.g. --params.reps=1000.")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("config", nargs="?", help="path to a JSON config")
    src.add_argument("--preset", help="name of a bundled preset")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--workers", type=int, help="worker threads (default: logical CPUs)")
    r.add_argument("--quiet", action="store_true", help="print only the verdict line")
    ps = sub.add_parser("presets", help="list bundled presets")
    ps.add_argument("--show", metavar="NAME", help="print one preset's JSON")
    v = sub.add_parser("validate", help="validate a config without running it")
    v.add_argument("config")
    return p


def _load_source(args):
    if args.preset:
        return cfgmod.load_preset(args.preset)
    return cfgmod.load(args.config)


def cmd_run(args, extra, out):
    try:
        base = _load_source(args)
        overrides = _split_overrides(extra)
        if args.out:
            overrides.append(("output.dir", args.out))
        if args.workers is not None:
            overrides.append(("workers", args.workers))
        cfg = cfgmod.resolve(base, overrides)
        cfgmod.validate(cfg)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if "workers" in cfg:
        _set_workers(cfg["workers"])
    try:
        rep, files = run_config(cfg)
    except HypothesisViolation as exc:
        print(f"error: theorem hypothesis not met: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (cfgmod.ConfigError, BpreError, ValueError, OverflowError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    lines = rep.summary_lines()
    if args.quiet:
        lines = lines[:1]
    for line in lines:
        print(line, file=out)
    if not args.quiet:
        for f in files:
            print(f"wrote {f}", file=out)
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_presets(args, out):
    if args.show:
        try:
            print(json.dumps(cfgmod.load_preset(args.show), indent=2), file=out)
        except cfgmod.ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        return EXIT_OK
    for name in cfgmod.preset_names():
        p = cfgmod.load_preset(name)
        print(f"{name:28s} {p['campaign']:10s} {p.get('description', '')}", file=out)
    return EXIT_OK


def cmd_validate(args, out):
    try:
        cfg = cfgmod.resolve(cfgmod.load(args.config))
        cfgmod.validate(cfg)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"ok: {args.config} ({cfg['campaign']})", file=out)
    return EXIT_OK


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command != "run" and extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    if args.command == "run":
        return cmd_run(args, extra, out)
    if args.command == "presets":
        return cmd_presets(args, out)
    return cmd_validate(args, out)


if __name__ == "__main__":
    sys.exit(main())
