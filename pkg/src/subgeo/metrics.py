"""Distances between laws: exact total variation on the lattice, coupling
upper bounds for Wasserstein distances, and a 1-D monotone-matching estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._io import write_csv
from .chains import LatticeDist, LatticeSpec, iterate_distribution
from .coupling import CoupledTrace, Eta, Trivial

__all__ = [
    "DistanceEstimate",
    "tv_exact",
    "tv_curve",
    "wasserstein_upper",
    "comonotone_w1d",
    "write_distance_curve",
]

KINDS = ("ExactTV", "CouplingUpper", "Comonotone1D")


@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    kind: str
    stderr: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if not -1e-12 <= self.value <= 1 + 1e-12:
            raise ValueError(f"distance {self.value} outside [0, 1]")
        if self.kind == "ExactTV" and self.stderr is not None:
            raise ValueError("exact distances carry no standard error")

    def as_dict(self):
        return {"value": self.value, "kind": self.kind, "stderr": self.stderr}


def _weights(p) -> np.ndarray:
    return p.weights if isinstance(p, LatticeDist) else np.asarray(p, dtype=float)


def tv_exact(p, q) -> DistanceEstimate:
    """``(1/2) sum |p_i - q_i|`` for two laws on the same truncation."""
    a, b = _weights(p), _weights(q)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return DistanceEstimate(min(1.0, 0.5 * float(np.abs(a - b).sum())), "ExactTV")


def tv_curve(spec: LatticeSpec, init: LatticeDist, n_max: int, reference=None) -> np.ndarray:
    """``TV(init P^n, reference)`` for ``n = 0..n_max``; reference defaults to ``pi_K``."""
    ref = _weights(reference if reference is not None else spec.stationary())
    out = np.empty(n_max + 1)
    for n, p in enumerate(iterate_distribution(spec, init, n_max)):
        out[n] = 0.5 * np.abs(p - ref).sum()
    return np.minimum(out, 1.0)


def wasserstein_upper(traces, n: int) -> DistanceEstimate:
    """Mean coupled distance at time ``n`` with its standard error.

    ``traces`` is either a collection of :class:`CoupledTrace` or a
    replicate-by-time array of distances.
    """
    if isinstance(traces, np.ndarray):
        d = traces[:, n]
    else:
        traces = list(traces)
        if not traces:
            raise ValueError("empty trace collection")
        d = np.array([t.dists[n] for t in traces])
    if d.size == 0:
        raise ValueError("empty trace collection")
    se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    return DistanceEstimate(float(d.mean()), "CouplingUpper", se)


def comonotone_w1d(xs: Sequence[float], ys: Sequence[float], metric) -> DistanceEstimate:
    """Monotone matching of two equal-size 1-D samples.

    For a cost that is a concave function of ``|x - y|`` the monotone
    coupling is optimal on the line, so this is an estimate of ``W_d``.
    Diagnostic only.
    """
    xs = np.sort(np.asarray(xs, dtype=float).ravel())
    ys = np.sort(np.asarray(ys, dtype=float).ravel())
    if xs.size != ys.size:
        raise ValueError("samples must have equal sizes")
    d = np.asarray(metric(xs[:, None], ys[:, None]), dtype=float)
    se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0
    return DistanceEstimate(float(d.mean()), "Comonotone1D", se)


def write_distance_curve(path, ns, estimates: Sequence[DistanceEstimate]) -> None:
    write_csv(
        path,
        ["n", "value", "stderr", "kind"],
        [list(ns), [e.value for e in estimates],
         [e.stderr if e.stderr is not None else "" for e in estimates],
         [e.kind for e in estimates]],
    )
