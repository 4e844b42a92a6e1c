"""Simulate one population under a random environment and watch W_n settle.

Run: python demos/trajectory_and_limit.py
"""

import math

from bprelab import EnvironmentModel, poisson, realize
from bprelab import engine, limits

model = EnvironmentModel.iid([poisson(1.5), poisson(2.5)], [0.5, 0.5])
env = realize(model, 80, env_seed=1)

tr = engine.simulate(env, 30, traj_seed=11)
print(" n          Z_n        W_n")
for k in range(0, 31, 5):
    print(f"{k:2d} {tr.z[k]:12d} {tr.w[k]:10.6f}")

est = engine.estimate_W(env, tr, extra_depth=25)
print(f"\nW_hat = W_55 = {est.value:.6f}")
print(f"residual rms bound sqrt(E(W - W_55)^2) = {math.sqrt(est.residual_variance_bound):.2e}")

# quenched standard deviation of W under this environment
print(f"delta_inf(xi) = {math.sqrt(limits.delta2(env)):.6f}")
print(f"P(extinction by generation 60) = {limits.extinction_prob(env, 60).value:.6f}")
