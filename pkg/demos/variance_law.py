"""Fluctuations W_hat - W_n in a constant Poisson(2) environment.

The quenched variance of W - W_n is the tail of the variance series from
n, which for Poisson(2) is 2**-n. Compare with Monte Carlo.

Run: python demos/variance_law.py
"""

import numpy as np

from bprelab import constant_env, poisson
from bprelab import engine, limits

env = constant_env(poisson(2.0), 60)
series = limits.delta2_partial(env)
print(f"delta2 = {series.value:.12f}  (closed form 1 / (lambda - 1) = 1)")

print("\n n   var MC        tail_from(n)  2**-n")
for n in (2, 4, 6, 8):
    pairs = engine.sample_fluctuation(env, n, extra_depth=25, reps=20_000, seed=n)
    var = np.var(pairs[:, 1], ddof=1)
    print(f"{n:2d}  {var:.6f}    {series.tail_from(n):.6f}      {2.0 ** -n:.6f}")
