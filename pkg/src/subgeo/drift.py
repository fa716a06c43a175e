"""Numerical certification of drift conditions.

Three inequalities are checked pointwise:

* single drift ``PV <= V - phi(V) + b``;
* double drift ``PV(x) + PV(y) <= V(x) + V(y) - phi(V(x) + V(y)) + b 1_Delta``;
* sequence drift ``Q V_{n+1} <= V_n - r(n) + b_seq r(n) 1_Delta`` with
  ``V_n(x, y) = H_n(V(x) + V(y))``.

``PV`` is either an exact row sum (lattice chain) or a Monte Carlo mean with
a one-sided confidence bound.  Each check point is classified as ``holds``,
``violated`` or ``undecided``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from ._io import write_json
from ._streams import Streams
from .chains import ARSpec, ExpNormLyapunov, LatticeSpec, ar_map, log_lyapunov_eval
from .coupling import ProductLevelSet, product_transition_matrix
from .rates import ConcaveRate, RateKit, SubgeomConstants

__all__ = [
    "ExactRow",
    "MonteCarlo",
    "GeometricRate",
    "PVEstimate",
    "DriftCertificate",
    "DoubleDriftParams",
    "DriftReport",
    "estimate_PV",
    "check_single_drift",
    "calibrate_drift",
    "single_to_double",
    "check_double_drift",
    "check_sequence_drift",
    "sequence_b",
]


@dataclass(frozen=True)
class ExactRow:
    """Exact expectation from the lattice transition row."""

    def as_dict(self):
        return {"kind": "exact_row"}


@dataclass(frozen=True)
class MonteCarlo:
    """Sample-mean expectation; a point holds when the one-sided upper bound does."""

    n_reps: int = 20000
    confidence: float = 0.975

    @property
    def z(self) -> float:
        return float(norm.ppf(self.confidence))

    def as_dict(self):
        return {"kind": "monte_carlo", "n_reps": self.n_reps, "confidence": self.confidence}


Method = Union[ExactRow, MonteCarlo]


@dataclass(frozen=True)
class GeometricRate:
    """``phi(t) = (1 - zeta) t``; the geometric drift, not a member of the subgeometric class."""

    zeta: float
    in_subgeometric_class = False

    def eval(self, t):
        return (1.0 - self.zeta) * np.asarray(t, dtype=float)

    def __call__(self, t):
        return self.eval(t)

    def inverse(self, y: float) -> float:
        return y / (1.0 - self.zeta)

    def as_dict(self):
        return {"family": "Geometric", "zeta": self.zeta, "in_subgeometric_class": False}


# ---------------------------------------------------------------------------
# expectations


@dataclass(frozen=True)
class PVEstimate:
    """``PV`` at each point: mean and standard error (zero when exact)."""

    mean: np.ndarray
    se: np.ndarray
    exact: bool

    def upper(self, z: float) -> np.ndarray:
        return self.mean + z * self.se

    def lower(self, z: float) -> np.ndarray:
        return self.mean - z * self.se


def _states_batch(chain, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if isinstance(chain, LatticeSpec):
        return pts.ravel()
    return pts.reshape(-1, chain.p)


def _mc_moments(log_values: np.ndarray) -> tuple[float, float]:
    # scale by the largest sample so heavy-tailed V cannot overflow the sum
    top = float(log_values.max())
    w = np.exp(log_values - top)
    scale = math.exp(top) if top < 709 else math.inf
    return scale * float(w.mean()), scale * float(w.std(ddof=1) / math.sqrt(w.size))


def estimate_PV(chain, V, points, method: Method, rng: Optional[np.random.Generator] = None) -> PVEstimate:
    """``PV(x)`` at every point."""
    pts = _states_batch(chain, points)
    if isinstance(method, ExactRow):
        if not isinstance(chain, LatticeSpec):
            raise TypeError("ExactRow needs the lattice chain")
        idx = chain.index(pts)
        PVall = chain.transition_matrix() @ np.exp(log_lyapunov_eval(chain, chain.states, V))
        return PVEstimate(PVall[idx], np.zeros(idx.size), True)
    if rng is None:
        raise ValueError("Monte Carlo needs a generator")

    if isinstance(chain, ARSpec) and isinstance(V, ExpNormLyapunov):
        return _ar_estimate(chain, V, pts, method.n_reps, rng)

    def one(i, gen):
        batch = np.repeat(pts[i][None, ...], method.n_reps, axis=0)
        return _mc_moments(np.asarray(log_lyapunov_eval(chain, chain.step(batch, gen), V)))

    res = _per_unit(one, len(pts), rng)
    return PVEstimate(np.array([r[0] for r in res]), np.array([r[1] for r in res]), False)


def _ar_estimate(chain: ARSpec, V: ExpNormLyapunov, pts: np.ndarray, n_reps: int, rng) -> PVEstimate:
    """Monte Carlo ``PV`` for ``X' = g(x) + Z`` with centred symmetric noise.

    The first-order term ``grad log V(g(x)) . Z`` has mean zero and is used
    as a control variate on ``V(g(x) + Z) / V(g(x))``; away from the origin
    this removes almost all of the sampling noise.
    """

    def one(i, gen):
        m = ar_map(chain, pts[i])
        z = chain.noise.sample(gen, n_reps, chain.p)
        logv_m = float(V.log(m))
        ratio = np.exp(V.log(m + z) - logv_m)
        nm = float(np.linalg.norm(m))
        if nm >= 1.0:
            grad = V.coef * V.power * nm ** (V.power - 2.0) * m
            ratio = ratio - z @ grad
        base = math.exp(logv_m) if logv_m < 709 else math.inf
        return base * float(ratio.mean()), base * float(ratio.std(ddof=1) / math.sqrt(n_reps))

    res = _per_unit(one, len(pts), rng)
    return PVEstimate(np.array([r[0] for r in res]), np.array([r[1] for r in res]), False)


def _per_unit(fn, n: int, rng) -> list:
    """Independent streams per unit when ``rng`` is a :class:`Streams`, else one shared generator."""
    if isinstance(rng, Streams):
        return rng.map(fn, n)
    return [fn(i, rng) for i in range(n)]


def _classify(upper_slack: np.ndarray, lower_slack: np.ndarray) -> np.ndarray:
    return np.where(upper_slack <= 0, "holds", np.where(lower_slack > 0, "violated", "undecided"))


def _round_tol(scale) -> np.ndarray:
    # rounding allowance for exact sums of terms of size ``scale``
    return 1e-12 * np.maximum(np.abs(np.asarray(scale, dtype=float)), 1.0)


# ---------------------------------------------------------------------------
# single drift


@dataclass(frozen=True)
class DriftCertificate:
    """Outcome of a pointwise check of ``PV <= V - phi(V) + b``.

    ``slack_profile`` holds ``PV - V + phi(V)`` (point estimate) so that the
    certificate is valid iff every point's upper-bound slack is ``<= b``.
    """

    chain: dict
    phi: object
    V: object
    b: float
    check_points: np.ndarray
    method: Method
    slack_profile: np.ndarray
    slack_upper: np.ndarray
    status: np.ndarray
    max_violation: float
    seed: Optional[int] = None

    @property
    def valid(self) -> bool:
        return bool(np.all(self.status == "holds"))

    def counts(self) -> dict:
        return {k: int(np.sum(self.status == k)) for k in ("holds", "violated", "undecided")}

    def as_dict(self) -> dict:
        return {
            "chain": self.chain,
            "phi": self.phi.as_dict(),
            "V": self.V.as_dict(),
            "b": self.b,
            "method": self.method.as_dict(),
            "valid": self.valid,
            "counts": self.counts(),
            "max_violation": self.max_violation,
            "seed": self.seed,
            "check_points": np.asarray(self.check_points).tolist(),
            "slack_profile": self.slack_profile.tolist(),
            "slack_upper": self.slack_upper.tolist(),
            "status": self.status.tolist(),
            "provenance": "exact" if isinstance(self.method, ExactRow) else "mc_ci",
        }

    def to_json(self, path) -> None:
        write_json(path, self.as_dict())


def _slacks(chain, phi, V, points, method, rng, est: Optional[PVEstimate] = None):
    pts = _states_batch(chain, points)
    est = est or estimate_PV(chain, V, pts, method, rng)
    Vx = np.exp(np.asarray(log_lyapunov_eval(chain, pts, V), dtype=float))
    base = -Vx + np.asarray(phi.eval(Vx), dtype=float)
    z = 0.0 if est.exact else method.z
    return pts, Vx, est.mean + base, est.upper(z) + base, est.lower(z) + base


def check_single_drift(
    chain, phi, V, b: float, points, method: Method, rng=None, seed: Optional[int] = None
) -> DriftCertificate:
    """Certify ``PV(x) <= V(x) - phi(V(x)) + b`` at each point."""
    if len(np.atleast_1d(points)) == 0:
        raise ValueError("points must be nonempty")
    V = V or chain.default_lyapunov()
    pts, Vx, mid, hi, lo = _slacks(chain, phi, V, points, method, rng)
    if isinstance(method, ExactRow):
        hi = hi - _round_tol(Vx)
        lo = hi
    status = _classify(hi - b, lo - b)
    return DriftCertificate(
        chain=chain.as_dict(), phi=phi, V=V, b=float(b), check_points=pts, method=method,
        slack_profile=mid, slack_upper=hi, status=status,
        max_violation=float(np.max(hi - b)), seed=seed,
    )


def calibrate_drift(
    chain,
    phi_unit,
    V,
    points,
    method: Method,
    rng=None,
    c_grid: Optional[Sequence[float]] = None,
    tail_fraction: float = 0.2,
    b_headroom: float = 0.0,
) -> tuple[float, float]:
    """Largest ``c`` on a grid, and the smallest ``b``, such that ``c phi_unit`` drifts.

    On a finite set every ``c`` is feasible with a large enough ``b``, so ``c``
    is called feasible only when the far tail drifts on its own: over the
    outer ``tail_fraction`` of the points (ordered by ``V``) the slack
    ``PV - V + c phi(V)`` never exceeds its value at the start of the tail
    (up to the Monte Carlo allowance).  ``b`` then absorbs a bounded centre.

    ``b_headroom`` adds that many standard errors per point to ``b`` so that
    an independent Monte Carlo re-check of the same points still passes.
    """
    V = V or chain.default_lyapunov()
    if c_grid is None:
        c_grid = np.geomspace(1e-5, 10.0, 181)
    c_grid = np.sort(np.asarray(c_grid, dtype=float))[::-1]
    pts = _states_batch(chain, points)
    est = estimate_PV(chain, V, pts, method, rng)
    Vx = np.exp(np.asarray(log_lyapunov_eval(chain, pts, V), dtype=float))
    order = np.argsort(Vx, kind="stable")
    z = 0.0 if est.exact else method.z
    up = est.upper(z)[order] - Vx[order]
    noise = 2.0 * z * est.se[order]
    phi_unit_vals = np.asarray(phi_unit.eval(Vx[order]), dtype=float)
    start = min(len(order) - 1, int((1.0 - tail_fraction) * len(order)))
    for c in c_grid:
        slack = up + c * phi_unit_vals
        tail = slack[start:]
        if np.all(tail[1:] <= tail[0] + noise[start + 1 :]):
            b = float(max((slack + b_headroom * est.se[order]).max(), 0.0))
            if isinstance(method, ExactRow):
                b += float(_round_tol(Vx).max())
            return float(c), b
    raise ValueError("no feasible (c, b) on the search grid")


# ---------------------------------------------------------------------------
# single to double drift


@dataclass(frozen=True)
class DoubleDriftParams:
    upsilon: float
    c: float
    delta: ProductLevelSet
    b_double: float
    phi: object = field(repr=False, default=None)

    @property
    def phi_double(self):
        return self.phi.scaled(self.c)

    def as_dict(self):
        return {"upsilon": self.upsilon, "c": self.c, "delta": self.delta.as_dict(),
                "b_double": self.b_double, "phi": self.phi.as_dict()}


def single_to_double(cert: DriftCertificate, upsilon: float) -> DoubleDriftParams:
    """Level set ``{V <= upsilon}^2`` with ``c = 1 - 2b / phi(upsilon)`` and ``b_double = 2b``."""
    if not cert.valid:
        raise ValueError("single drift certificate is not valid")
    threshold = cert.phi.inverse(2.0 * cert.b)
    if not upsilon > threshold:
        raise ValueError(f"upsilon={upsilon} must exceed phi^-1(2b)={threshold}")
    c = 1.0 - 2.0 * cert.b / float(cert.phi.eval(upsilon))
    if not 0 < c < 1:
        raise ValueError(f"c={c} outside (0, 1)")
    return DoubleDriftParams(float(upsilon), float(c), ProductLevelSet(cert.V, float(upsilon)),
                             2.0 * cert.b, cert.phi)


@dataclass(frozen=True)
class DriftReport:
    """Pairwise drift check outcome."""

    status: np.ndarray
    slack_upper: np.ndarray
    in_delta: np.ndarray
    sup_delta_V: float
    extra: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return bool(np.all(self.status == "holds")) and bool(self.extra.get("level_bound_ok", True))

    def counts(self) -> dict:
        return {k: int(np.sum(self.status == k)) for k in ("holds", "violated", "undecided")}

    def as_dict(self):
        return {"valid": self.valid, "counts": self.counts(), "sup_delta_V": self.sup_delta_V,
                "max_slack": float(np.max(self.slack_upper)), **self.extra}


def check_double_drift(
    chain, params: DoubleDriftParams, phi, V, pair_points, method: Method, rng=None
) -> DriftReport:
    """Check ``PV(x)+PV(y) <= V(x)+V(y) - c phi(V(x)+V(y)) + b_double 1_Delta`` at pairs."""
    V = V or chain.default_lyapunov()
    xs = _states_batch(chain, [p[0] for p in pair_points])
    ys = _states_batch(chain, [p[1] for p in pair_points])
    both = np.concatenate([xs, ys])
    est = estimate_PV(chain, V, both, method, rng)
    n = len(xs)
    z = 0.0 if est.exact else method.z
    mean = est.mean[:n] + est.mean[n:]
    se = np.hypot(est.se[:n], est.se[n:])
    Vx = np.exp(np.asarray(log_lyapunov_eval(chain, xs, V), dtype=float))
    Vy = np.exp(np.asarray(log_lyapunov_eval(chain, ys, V), dtype=float))
    inside = np.asarray(params.delta.contains(xs, ys), dtype=bool)
    rhs = Vx + Vy - params.c * np.asarray(phi.eval(Vx + Vy)) + params.b_double * inside
    hi = mean + z * se - rhs
    lo = mean - z * se - rhs
    if est.exact:
        hi = hi - _round_tol(Vx + Vy)
        lo = hi
    sup_v = float(np.max((Vx + Vy)[inside])) if inside.any() else 0.0
    return DriftReport(
        _classify(hi, lo), hi, inside, sup_v,
        {"level_bound_ok": sup_v <= 2.0 * params.upsilon,
         "n_in_delta": int(inside.sum()), "n_outside": int((~inside).sum())},
    )


# ---------------------------------------------------------------------------
# sequence drift


def sequence_b(consts: SubgeomConstants, b_double: float) -> float:
    """``b_seq = sup_p r(p+1)/r(p) * b / r(0)``."""
    return consts.r_step_ratio * b_double / float(consts.kit.r(0.0))


def check_sequence_drift(
    chain,
    kit: RateKit,
    V,
    delta,
    ell: int,
    b_seq: float,
    pair_points,
    n_max: int,
    method: Method = ExactRow(),
    rng=None,
    kernel=None,
) -> DriftReport:
    """Check ``Q V_{n+1}(x,y) <= V_n(x,y) - r(n) + b_seq r(n) 1_Delta`` for ``n = 0..n_max``.

    Exact on the lattice through product rows; otherwise Monte Carlo through
    ``kernel`` (a coupling kernel).  ``ell`` is recorded for provenance.
    """
    V = V or chain.default_lyapunov()
    ns = np.arange(n_max + 1)
    rn = np.asarray(kit.r(ns.astype(float)))
    statuses, slacks = [], []
    if isinstance(method, ExactRow):
        if not isinstance(chain, LatticeSpec):
            raise TypeError("ExactRow needs the lattice chain")
        Q = product_transition_matrix(chain)
        N = chain.n_states
        Vs = np.exp(np.asarray(log_lyapunov_eval(chain, chain.states, V), dtype=float))
        S = (Vs[:, None] + Vs[None, :]).ravel()
        rows = [int(chain.index(x)) * N + int(chain.index(y)) for x, y in pair_points]
        Qsub = Q[rows]
        cols = np.unique(Qsub.indices)
        Qsub = Qsub[:, cols]
        inside = np.asarray([bool(delta.contains(np.array([x]), np.array([y]))[0])
                             for x, y in pair_points])
        for n in ns:
            lhs = Qsub @ np.asarray(kit.H_k(n + 1, S[cols]))
            Vn = np.asarray(kit.H_k(n, S[rows]))
            rhs = Vn - rn[n] + b_seq * rn[n] * inside
            slack = lhs - rhs
            tol = _round_tol(kit.Hinv(float(kit.H(S[rows].max())) + n + 1))
            statuses.append(_classify(slack - tol, slack - tol))
            slacks.append(slack)
    else:
        if kernel is None or rng is None:
            raise ValueError("Monte Carlo sequence drift needs a coupling kernel and a generator")
        xs = _states_batch(chain, [p[0] for p in pair_points])
        ys = _states_batch(chain, [p[1] for p in pair_points])
        Vsum = lambda a, b: np.exp(np.asarray(log_lyapunov_eval(chain, a, V))) + np.exp(
            np.asarray(log_lyapunov_eval(chain, b, V)))
        inside = np.asarray(delta.contains(xs, ys), dtype=bool)

        def one(i, gen):
            bx = np.repeat(xs[i][None, ...], method.n_reps, axis=0)
            by = np.repeat(ys[i][None, ...], method.n_reps, axis=0)
            return Vsum(*kernel(bx, by, gen))

        nexts = _per_unit(one, len(xs), rng)
        S0 = Vsum(xs, ys)
        for n in ns:
            vals = [np.asarray(kit.H_k(n + 1, s)) for s in nexts]
            mean = np.array([v.mean() for v in vals])
            se = np.array([v.std(ddof=1) / math.sqrt(v.size) for v in vals])
            rhs = np.asarray(kit.H_k(n, S0)) - rn[n] + b_seq * rn[n] * inside
            statuses.append(_classify(mean + method.z * se - rhs, mean - method.z * se - rhs))
            slacks.append(mean + method.z * se - rhs)
    status = np.stack(statuses)
    slack = np.stack(slacks)
    return DriftReport(status.ravel(), slack.ravel(), np.tile(inside, len(ns)), 0.0,
                       {"n_max": n_max, "ell": ell, "b_seq": b_seq, "n_pairs": len(pair_points),
                        "worst_n": int(np.unravel_index(np.argmax(slack), slack.shape)[0])})
