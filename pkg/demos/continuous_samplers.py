"""
Nonlinear autoregression and preconditioned Crank-Nicolson
==========================================================

Two samplers on ``R^p``: an autoregression whose contraction weakens far
from the origin, and a pCN sampler whose proposal preserves a Gaussian
reference measure.  Both are coupled synchronously.
"""

# %%
# Autoregression: contraction in a ball, not globally
# ---------------------------------------------------
import numpy as np

from subgeo import ARSpec, Eta, PcnSpec
from subgeo.chains import TruncatedExpNoise, _uniform_ball, ar_lipschitz_ratio
from subgeo.coupling import kernel_for, simulate_distances

ar = ARSpec(2, 1.5, TruncatedExpNoise(1.0, 1.0))
rng = np.random.default_rng(0)
x, y = _uniform_ball(rng, 5000, 2, 1.5), _uniform_ball(rng, 5000, 2, 1.5)
print("max ratio in B(0, 1.5):", ar_lipschitz_ratio(ar, x, y).max())
r = np.array([[2.0, 0.0]])
print("radial ratio near |x| = 2:", ar_lipschitz_ratio(ar, r, r * 1.001)[0])

D = simulate_distances(kernel_for(ar), (np.zeros(2), np.array([10.0, 0.0])), 100, 4000, Eta(1.0, 1.0), rng)
print("mean coupled distance:", np.round(D.mean(axis=0)[[0, 25, 50, 100]], 4))

# %%
# pCN: both-accept steps contract by rho^beta
# -------------------------------------------
pcn = PcnSpec(10, 0.5, tuple(1.0 / (1 + np.arange(10)) ** 2))
D = simulate_distances(kernel_for(pcn), (np.zeros(10), np.eye(10)[0] * 3.0), 50, 4000, Eta(5.0, 0.5), rng)
print("rho^beta =", 0.5**0.5)
print("mean coupled distance:", np.round(D.mean(axis=0)[[0, 1, 5, 20, 50]], 4))
