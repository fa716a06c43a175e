"""
Rate functions and their transforms
===================================

A concave rate ``phi`` determines how fast a chain forgets its start.  The
transform ``H(t) = int_1^t ds / phi(s)`` and its inverse turn ``phi`` into the
cumulative rate ``R = H^{-1}`` and the pointwise rate ``r = phi(R)``.
"""

# %%
# Closed forms and quadrature
# ---------------------------
# The square root has ``H(t) = 2(sqrt(t) - 1)``, so ``H(4) = 2`` and
# ``R(t) = (1 + t/2)^2``.  Families without a closed form fall back to
# adaptive quadrature with a certified tolerance.
import math

import numpy as np

from subgeo import Extended, Logarithmic, PcnDrift, Polynomial, Subexponential, build_rate_kit, extend_concave

kit = build_rate_kit(Polynomial(0.5))
print("H(4) =", float(kit.H(4.0)), " Hinv(2) =", float(kit.Hinv(2.0)))

quad = build_rate_kit(Subexponential(1.0), force_quadrature=True)
closed = build_rate_kit(Subexponential(1.0))
t = np.geomspace(2.0, 1e6, 5)
print("closed form vs quadrature:", np.max(np.abs(quad.H(t) / closed.H(t) - 1)))

# %%
# Growth of the cumulative rate
# -----------------------------
# Polynomial rates give polynomial ``R``; the subexponential family gives a
# stretched exponential; logarithmic rates barely grow.
ts = np.array([10.0, 100.0, 1000.0])
for phi in [Polynomial(0.5), Subexponential(1.0), Logarithmic(1.0), PcnDrift(0.5, 2.0, 0.5)]:
    k = build_rate_kit(phi)
    print(f"{phi!r:55s} log R =", np.round(np.log(k.R(ts)), 2))

# %%
# Concave extension below a join point
# ------------------------------------
# A rate defined on ``[1, inf)`` is extended to ``[0, M]`` by
# ``A t + B sqrt(t)``, matching value and slope at ``M``.
ext = extend_concave(Subexponential(0.5), 4.0)
grid = np.linspace(0.0, 8.0, 9)
print("extension:", np.round(ext.eval(grid), 4))
print("second differences <= 0:", bool(np.diff(ext.eval(np.linspace(0, 8, 801)), 2).max() <= 1e-12))
print("built-in extended family:", Extended(Subexponential(2.0), math.e**2))
