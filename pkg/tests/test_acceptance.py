"""Acceptance gate: one test per criterion, each run from its bundled preset.

Every test prints a single ``criterion N: PASS|FAIL`` line with the
measured quantities. Run directly with ``python tests/test_acceptance.py``
or through pytest (``pytest tests/test_acceptance.py -s`` shows the lines
inline; they are also printed without ``-s``).
"""

import math
import sys
import time

import pytest

from bprelab import cli, config, verify

pytestmark = pytest.mark.acceptance


def run_preset(name, outdir):
    cfg = config.resolve(config.load_preset(name), environ={})
    t0 = time.perf_counter()
    rep, _ = cli.run_config(cfg, str(outdir))
    return rep, time.perf_counter() - t0


def verdict(capsys, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_1_closed_form_delta(tmp_path, capsys):
    rep, secs = run_preset("closed-form-delta", tmp_path)
    values = [r["value"] for r in rep.stats]
    errs = [abs(v - 1.0) for v in values]
    ok = all(e <= 1e-9 for e in errs) and all(r["converged"] for r in rep.stats) and secs < 1.0
    verdict(capsys, 1, ok, f"delta2 = {values}, max rel err {max(errs):.2e} <= 1e-9, {secs:.2f} s < 1 s")


def test_criterion_2_martingale_variance(tmp_path, capsys):
    rep, secs = run_preset("martingale-variance", tmp_path)
    s = rep.stats[0]
    mean_ok = abs(s["mean"]) <= 3 * s["se"]
    var_err = abs(s["variance"] / 2.0 ** -5 - 1)
    ok = mean_ok and var_err <= 0.05 and secs < 60 and s["reps"] == 100_000
    verdict(capsys, 2, ok, f"mean {s['mean']:.3g} (3 SE = {3 * s['se']:.3g}), variance {s['variance']:.5f} "
                           f"vs 0.03125 rel err {var_err:.3%} <= 5%, {secs:.1f} s")


def test_criterion_3_heyde_clt(tmp_path, capsys):
    rep, secs = run_preset("heyde-gw-clt", tmp_path)
    frac = rep.fits["pass_fraction"]
    thr = rep.stats[0]["ks_threshold"]
    worst = max(r["ks"] for r in rep.stats)
    ok = len(rep.stats) == 20 and frac >= 0.95 and abs(thr - 0.0163) < 5e-4
    verdict(capsys, 3, ok, f"{frac:.0%} of 20 campaigns below KS threshold {thr:.4f} "
                           f"(worst KS {worst:.4f}), {secs:.0f} s")


def test_criterion_4_random_env_clt_annealed(tmp_path, capsys):
    rep, secs = run_preset("random-env-clt-annealed", tmp_path)
    ks = [r["ks"] for r in rep.stats]
    decreasing = all(b < a for a, b in zip(ks, ks[1:]))
    ok = [r["n"] for r in rep.stats] == [4, 8, 12] and decreasing and ks[-1] < 0.03
    verdict(capsys, "4a", ok, f"annealed KS {[round(k, 4) for k in ks]} strictly decreasing, "
                              f"final < 0.03, {secs:.0f} s")


def test_criterion_4_random_env_clt_quenched(tmp_path, capsys):
    rep, secs = run_preset("random-env-clt-quenched", tmp_path)
    ks = [r["ks"] for r in rep.stats]
    decreasing = all(b < a for a, b in zip(ks, ks[1:]))
    ok = decreasing and all(r["environments"] == 20 for r in rep.stats)
    verdict(capsys, "4b", ok, f"quenched KS averaged over 20 environments {[round(k, 4) for k in ks]} "
                              f"decreasing, {secs:.0f} s")


def _slope(rep):
    return rep.fits["log_statistic_vs_n"]["slope"]


def test_criterion_5_exponential_rate(tmp_path, capsys):
    rep_p, s1 = run_preset("exp-rate-poisson", tmp_path / "p")
    rep_a, s2 = run_preset("exp-rate-alternating", tmp_path / "a")
    want_p = -math.log(2.0)
    want_a = -0.5 * (math.log(1.5) + math.log(2.5))
    err_p = abs(_slope(rep_p) / want_p - 1)
    err_a = abs(_slope(rep_a) / want_a - 1)
    ns = [r["n"] for r in rep_p.stats]
    ok = err_p <= 0.1 and err_a <= 0.1 and ns == list(range(4, 15))
    ok = ok and rep_p.fits["log_statistic_vs_n"]["statistic"] == "mean_square"
    verdict(capsys, 5, ok, f"Poisson(2) slope {_slope(rep_p):.5f} vs {want_p:.5f} ({err_p:.2%}); "
                           f"alternating slope {_slope(rep_a):.5f} vs {want_a:.5f} ({err_a:.2%}); "
                           f"both within 10%, {s1 + s2:.0f} s")


def test_criterion_6_polynomial_rate(tmp_path, capsys):
    rep, secs = run_preset("power-tail-rate", tmp_path)
    c = rep.check("n_alpha_median_decreasing_top_half")
    scaled = rep.fits["scaled_statistic"]
    top = verify.top_half(sorted(scaled))
    seq = [scaled[n] for n in top]
    ok = (all(b < a for a, b in zip(seq, seq[1:])) and c.passed and "heuristic" in c.label
          and rep.stats[0]["reps"] == 10_000)
    verdict(capsys, 6, ok, f"n*median|dW| over n={top[0]}..{top[-1]} {[f'{v:.3g}' for v in seq]} decreasing "
                           f"[{c.label}], {secs:.0f} s")


def test_criterion_7_supergeometric_tail(tmp_path, capsys):
    rep, secs = run_preset("finite-state-tail", tmp_path)
    fit = rep.fits["tail[eps=0.1]"]
    # smallest mean over the two states: GeometricShifted(0.4) has mean 1 / 0.6
    need = (math.log(1 / 0.6) / 3.0) * 0.75
    inc = fit["increments"]
    rejected = fit["geometric_fit"]["p_value"] < 0.01
    ok = all(d > 0 for d in inc) and fit["mean_increment"] >= need and rejected
    ok = ok and rep.stats[0]["reps"] == 1_000_000 and rep.fits["supergeometric"]
    verdict(capsys, 7, ok, f"y(n) increments min {min(inc):.3f}, mean {fit['mean_increment']:.3f} "
                           f">= {need:.3f}; geometric fit p = {fit['geometric_fit']['p_value']:.2g} < 0.01, "
                           f"{secs:.0f} s")


def test_criterion_8_exponential_moment(tmp_path, capsys):
    rep, secs = run_preset("exp-moment-geometric", tmp_path)
    psi = {r["t"]: r for r in rep.stats}
    val = psi[0.5]["psi[constant]"]
    mc = rep.fits["monte_carlo"]
    ok = (psi[0.5]["label"] == "stable" and abs(val - 2.0) <= 1e-6
          and psi[1.5]["label"] == "divergent"
          and abs(mc["mean"] - mc["psi_exact"]) <= 3 * mc["se"]
          and rep.check("stable_divergent_monotone_in_t").passed)
    verdict(capsys, 8, ok, f"psi(0.5) = {val:.10f}, psi(1.5) {psi[1.5]['label']}, MC {mc['mean']:.4f} "
                           f"+- {mc['se']:.4f} vs {mc['psi_exact']:.4f}, frontier monotone")


def test_criterion_9_calibration(tmp_path, capsys):
    rep, secs = run_preset("calibration", tmp_path)
    slope = rep.check("synthetic_rate_slope_error")
    flags = rep.check("synthetic_geometric_flagged")
    samp = rep.check("sampler_ks_rejections")
    ok = slope.value <= 1e-12 and flags.value == 0 and samp.passed and secs < 60
    verdict(capsys, 9, ok, f"slope error {slope.value:.1e}, {flags.value}/100 geometric tails flagged, "
                           f"sampler KS rejections {samp.value}/{len(rep.stats)} (allowed {samp.threshold}), "
                           f"{secs:.1f} s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
