"""
Random-walk Metropolis on a lattice
===================================

A symmetric three-point proposal on ``hZ`` targets a heavy-tailed law
proportional to ``(1 + |x|)^{-(1+h)}``.  The truncated chain is a sparse
matrix, so laws can be evolved exactly.
"""

# %%
# Transition matrix and stationary law
# ------------------------------------
import numpy as np

from subgeo import LatticeDist, LatticeSpec
from subgeo.chains import srwm_evolve
from subgeo.metrics import tv_curve

spec = LatticeSpec(0.4, 400)
P = spec.transition_matrix()
pi = spec.stationary()
print("states:", spec.n_states, " nonzeros:", P.nnz)
print("row sums are one:", bool(np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0)))
print("mass lost to truncation:", spec.truncation_mass())

# %%
# Exact total variation to stationarity
# -------------------------------------
# Starting at the origin, the distance decays slowly because the walk must
# explore the heavy tail.
curve = tv_curve(spec, LatticeDist.point_mass(spec, 0.0), 2000)
for n in (1, 10, 100, 1000, 2000):
    print(f"n={n:5d}  TV={curve[n]:.4f}")

# %%
# Sampling agrees with exact evolution
# ------------------------------------
rng = np.random.default_rng(0)
x = np.zeros(50000)
for _ in range(20):
    x = spec.step(x, rng)
exact = srwm_evolve(spec, LatticeDist.point_mass(spec, 0.0), 20)
print("P(|X_20| <= 1): simulated", np.mean(np.abs(x) <= 1.0),
      " exact", exact.weights[np.abs(spec.states) <= 1.0].sum())
