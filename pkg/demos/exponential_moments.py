"""Where E exp(t W) stops being finite.

psi_n(t) = E_xi exp(t W_n) is computed exactly by composing generating
functions. For GeometricShifted(0.5), W is Exp(1) and psi(t) = 1/(1 - t)
for t < 1.

Run: python demos/exponential_moments.py
"""

from bprelab import EnvironmentModel, constant_env, geometric_shifted, poisson, realize
from bprelab import limits

env = constant_env(geometric_shifted(0.5), 1000)
for t in (0.25, 0.5, 0.9, 0.99, 1.5):
    label, value = limits.classify_mgf(env, t, 1000)
    exact = 1 / (1 - t) if t < 1 else float("inf")
    print(f"t = {t:4}  {label:10s} psi = {value:.8g}   1/(1-t) = {exact:.8g}")

lo, hi = limits.mgf_radius(env, 2.0, 1000, tol=1e-4)
print(f"radius bracket: [{lo:.4f}, {hi:.4f}]")

# a random environment: the radius moves with the realized sequence
model = EnvironmentModel.iid([geometric_shifted(0.4), geometric_shifted(0.5)], [0.5, 0.5])
for seed in range(3):
    e = realize(model, 1000, seed)
    print(f"env seed {seed}: radius in [{limits.mgf_radius(e, 3.0, 1000, tol=1e-3)[0]:.3f}, ...]")

# Poisson(2) has an entire generating function and psi is finite for every t,
# but it grows doubly exponentially: psi(2t) = exp(2 (psi(t) - 1))
poi = constant_env(poisson(2.0), 1000)
for t in (1.0, 2.0, 3.0, 4.0):
    label, value = limits.classify_mgf(poi, t, 200)
    print(f"Poisson(2) t = {t}: {label:10s} psi = {value:.6g}")
