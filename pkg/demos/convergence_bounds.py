"""
Explicit convergence bounds
===========================

Given a coupling set ``(ell, epsilon)``, pairwise drift constants and a rate
``phi``, the bounds give an explicit number for every ``n``.  Their decay
follows the cumulative rate ``R``.
"""

# %%
# Assemble constants and evaluate
# -------------------------------
import numpy as np

from subgeo import BoundInputs, Polynomial, Subexponential, build_rate_kit, subgeom_constants
from subgeo.bounds import assemble_constants, eval_bound_i, eval_bound_ii

inputs_cfg = {"ell": 1, "epsilon": 0.5, "b_double": 1.0, "sup_delta_V": 4.0,
              "M_phi": 100.0, "M_V": 2.0, "V_of_x": 1.0}
ns = np.array([1e2, 1e3, 1e4, 1e5, 1e6])
for phi in (Polynomial(0.5), Subexponential(1.0)):
    kit = build_rate_kit(phi)
    inputs = BoundInputs(kit, **inputs_cfg)
    bc = assemble_constants(inputs, subgeom_constants(kit, 1, 1e4))
    print(repr(phi))
    print("  a1, a2, a3 =", f"{bc.a1:.3g}, {bc.a2:.3g}, {bc.a3:.3g}")
    print("  log bound (i): ", np.round(eval_bound_i(bc, inputs, kit, ns)["log_total_raw"], 2))
    print("  log bound (ii):", np.round(eval_bound_ii(bc, inputs, kit, ns, 0.9)["log_total_raw"], 2))

# %%
# Polynomial order
# ----------------
# For ``phi(t) = sqrt(t)`` the first bound decays like ``1/n``.
kit = build_rate_kit(Polynomial(0.5))
inputs = BoundInputs(kit, **inputs_cfg)
bc = assemble_constants(inputs, subgeom_constants(kit, 1, 1e4))
log_total = eval_bound_i(bc, inputs, kit, ns)["log_total_raw"]
print("slope of log bound vs log n:", np.polyfit(np.log(ns[1:]), log_total[1:], 1)[0])
