"""Subgeometric convergence toolkit for Markov chains.

Rate-function calculus, drift certification, coupled simulation of three
samplers, and explicit Wasserstein convergence bounds.
"""

__version__ = "0.1.0"

from .rates import (
    ConcaveRate,
    Extended,
    Logarithmic,
    PcnDrift,
    Polynomial,
    RateKit,
    SubgeomConstants,
    Subexponential,
    build_rate_kit,
    extend_concave,
    H_k,
    phi_eval,
    r_phi,
    subgeom_constants,
)
from .chains import ARSpec, LatticeDist, LatticeSpec, PcnSpec
from .coupling import CoupledTrace, Eta, ProductBall, ProductLevelSet, LevelSet, Trivial
from .drift import DriftCertificate, DoubleDriftParams, ExactRow, MonteCarlo
from .bounds import BoundConstants, BoundInputs, BoundReport
from .metrics import DistanceEstimate, tv_exact
from ._streams import seed_derive
