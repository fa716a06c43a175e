"""
Certifying a drift condition
============================

A drift condition ``PV <= V - phi(V) + b`` is checked point by point, either
exactly from a sparse transition row or with a Monte Carlo confidence bound.
Calibration picks the largest scale ``c`` of ``phi`` that holds and the
smallest matching ``b``.
"""

# %%
# Exact calibration on the lattice
# --------------------------------
import numpy as np

from subgeo import LatticeSpec, Polynomial
from subgeo.drift import ExactRow, calibrate_drift, check_double_drift, check_single_drift, single_to_double

spec = LatticeSpec(0.4, 500, s_exponent=2.2)
V = spec.default_lyapunov()
phi_unit = Polynomial(0.2 / 2.2)
inner = spec.states[(spec.states >= 0) & (spec.states < spec.xmax)]
c, b = calibrate_drift(spec, phi_unit, V, inner, ExactRow())
phi = phi_unit.scaled(c)
cert = check_single_drift(spec, phi, V, b, spec.states, ExactRow())
print(f"c = {c:.5f}, b = {b:.4f}, valid = {cert.valid}, counts = {cert.counts()}")

# %%
# From a single drift to a pairwise drift
# ---------------------------------------
# Choosing a level ``upsilon`` with ``phi(upsilon) = 4b`` gives a pairwise
# drift constant of one half outside the level set.
upsilon = phi.inverse(4.0 * b)
params = single_to_double(cert, upsilon)
sub = spec.states[::20]
report = check_double_drift(spec, params, phi, V, [(x, y) for x in sub for y in sub], ExactRow())
print(f"upsilon = {upsilon:.3g}, c = {params.c:.3f}, pairwise drift valid = {report.valid}")
print("largest slack:", np.round(report.as_dict()["max_slack"], 4))
