"""Normalized fluctuations against the mixed-normal limit G sqrt(W).

For constant GeometricShifted(0.5) offspring W is Exp(1), so G sqrt(W) is
Laplace with scale 1/sqrt(2). The KS distance between U_n and a limit
sample shrinks as n grows.

Run: python demos/mixed_normal_limit.py
"""

from scipy import stats

from bprelab import constant_env, geometric_shifted
from bprelab import limits, verify

env = constant_env(geometric_shifted(0.5), 300)
lim = limits.limit_law_sample(env, 20_000, 30, seed=1).value
laplace = stats.laplace(scale=2 ** -0.5)
print(f"limit sample vs Laplace(0, 1/sqrt 2): KS p-value {stats.kstest(lim, laplace.cdf).pvalue:.3f}")

rep = verify.check_clt(env, [1, 2, 4, 8], 20_000, 30, seed=2, mode="quenched")
thr = verify.ks_threshold(20_000, 20_000)
for row in rep.stats:
    print(f"n = {row['n']:2d}  KS(U_n, G sqrt W) = {row['ks']:.4f}   (1% threshold {thr:.4f})")
