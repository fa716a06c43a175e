"""
Distances between laws
======================

Exact total variation on a finite state space, coupling upper bounds for
Wasserstein distances, and a monotone-matching estimate on the line.
"""

# %%
import numpy as np

from subgeo import Eta, LatticeSpec, ProductBall, Trivial, tv_exact
from subgeo.coupling import kernel_for, simulate_distances
from subgeo.metrics import comonotone_w1d, wasserstein_upper

print("TV:", tv_exact([0.5, 0.5, 0.0], [0.0, 0.5, 0.5]).value)

# %%
# Coupling upper bound
# --------------------
# The mean coupled distance at time ``n`` bounds the Wasserstein distance
# between the two laws at time ``n``.
spec = LatticeSpec(0.4, 100)
D = simulate_distances(kernel_for(spec), (0.0, 3.0), 200, 4000, Trivial(), np.random.default_rng(2))
for n in (0, 50, 200):
    est = wasserstein_upper(D, n)
    print(f"n={n:3d}  upper={est.value:.4f} +- {est.stderr:.4f}")

# %%
# Monotone matching
# -----------------
# For a bounded concave metric the sorted matching of two samples on the
# line is optimal.
rng = np.random.default_rng(3)
xs = rng.standard_normal(2000)
print("shifted sample:", comonotone_w1d(xs, xs + 0.36, Eta(2.0, 0.5)).value, " expected", 0.6 / 2.0)
