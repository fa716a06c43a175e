"""
Couplings and coupling sets
===========================

Two copies of a chain are run with shared randomness.  A coupling set is a
set of pairs from which ``ell`` coupled steps shrink the expected distance
by a factor ``1 - epsilon``.  On the lattice the pair chain is finite, so
``epsilon`` and renewal-time tails are computed exactly.
"""

# %%
# Exact contraction of a small ball
# ---------------------------------
import numpy as np

from subgeo import LatticeSpec, ProductBall, Trivial
from subgeo._streams import Streams
from subgeo.coupling import exact_epsilon, kernel_for, product_chain_exact, simulate_coupled, verify_coupling_set

spec = LatticeSpec(0.4, 100)
ball = ProductBall(0.5)
exact = exact_epsilon(spec, ball, 2)
print(f"exact epsilon = {exact['epsilon']:.6f}  (1/81 = {1 / 81:.6f})")

# %%
# Monte Carlo estimate with a confidence interval
# -----------------------------------------------
pts = spec.states[np.abs(spec.states) <= 0.5]
pairs = [(a, b) for a in pts for b in pts if a != b]
rep = verify_coupling_set(kernel_for(spec), ball, 2, Trivial(), pairs, 20000, Streams(1))
print(f"estimate = {rep.epsilon_hat:.5f}, 95% interval = ({rep.ci[0]:.5f}, {rep.ci[1]:.5f})")

# %%
# Exact meeting probability and renewal tails
# -------------------------------------------
ex = product_chain_exact(spec, (0.0, 3.0), 300, ball, 2, m_max=3)
for n in (0, 50, 100, 300):
    print(f"n={n:3d}  P(not met)={ex.dist_expectation[n]:.4f}  P(T_3 >= n)={ex.tail[3, n]:.4f}")

# %%
# One simulated trajectory
# ------------------------
# Renewals into the wider set ``|x|, |y| <= 3`` are spaced at least ``ell`` apart.
trace = simulate_coupled(kernel_for(spec), (0.0, 3.0), 300, ProductBall(3.0), 2, Trivial(),
                         np.random.default_rng(5))
print("renewal times:", trace.hitting_times[:8], " coalesced at:", trace.coalesced_at)
