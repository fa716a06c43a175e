"""Coupling kernels, coupled trajectories, renewal times and exact
product-chain computations on the lattice.

A coupling kernel is any callable ``kernel(x, y, rng) -> (x', y')`` that is
vectorised over a leading batch axis; ``functools.partial(couple_srwm, spec)``
and friends produce one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from .chains import ARSpec, LatticeSpec, PcnSpec, ar_map, pcn_step

__all__ = [
    "ProductBall",
    "LevelSet",
    "ProductLevelSet",
    "Trivial",
    "Eta",
    "CoupledTrace",
    "CouplingSetReport",
    "ExactProductResult",
    "couple_srwm",
    "couple_ar",
    "couple_pcn",
    "kernel_for",
    "simulate_coupled",
    "simulate_distances",
    "product_transition_matrix",
    "product_chain_exact",
    "exact_epsilon",
    "verify_coupling_set",
]


# ---------------------------------------------------------------------------
# coupling sets and metrics


def _norm(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)


@dataclass(frozen=True)
class ProductBall:
    """``{(x, y): max(||x||, ||y||) <= M}``."""

    M: float

    def contains(self, x, y) -> np.ndarray:
        return np.maximum(_norm(x), _norm(y)) <= self.M

    def as_dict(self):
        return {"kind": "product_ball", "M": self.M}


@dataclass(frozen=True)
class LevelSet:
    """``{(x, y): V(x) + V(y) <= u}``."""

    V: object
    threshold: float

    def contains(self, x, y) -> np.ndarray:
        lx, ly = self.V.log(x), self.V.log(y)
        return np.logaddexp(lx, ly) <= math.log(self.threshold)

    def as_dict(self):
        return {"kind": "level_set", "V": self.V.as_dict(), "threshold": self.threshold}


@dataclass(frozen=True)
class ProductLevelSet:
    """``{V <= upsilon}^2``: both coordinates in the sublevel set."""

    V: object
    upsilon: float

    def contains(self, x, y) -> np.ndarray:
        cap = math.log(self.upsilon)
        return (self.V.log(x) <= cap) & (self.V.log(y) <= cap)

    def as_dict(self):
        return {"kind": "product_level_set", "V": self.V.as_dict(), "upsilon": self.upsilon}


@dataclass(frozen=True)
class Trivial:
    """``d0(x, y) = 1{x != y}``."""

    def __call__(self, x, y) -> np.ndarray:
        diff = np.asarray(x, dtype=float) != np.asarray(y, dtype=float)
        return (diff if diff.ndim <= 1 else diff.any(axis=-1)).astype(float)

    def as_dict(self):
        return {"kind": "trivial"}


@dataclass(frozen=True)
class Eta:
    """``d(x, y) = min(1, ||x - y||^beta / eta)``."""

    eta: float
    beta: float = 1.0

    def __post_init__(self):
        if not self.eta > 0 or not 0 < self.beta <= 1:
            raise ValueError("Eta metric needs eta > 0 and beta in (0, 1]")

    def __call__(self, x, y) -> np.ndarray:
        gap = _norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        return np.minimum(1.0, gap**self.beta / self.eta)

    def as_dict(self):
        return {"kind": "eta", "eta": self.eta, "beta": self.beta}


# ---------------------------------------------------------------------------
# coupling kernels


def couple_srwm(spec: LatticeSpec, x, y, rng: np.random.Generator):
    """Independent moves off the diagonal, a shared move on it."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xn = spec.step(x, rng)
    yn = spec.step(y, rng)
    yn = np.where(x == y, xn, yn)
    return xn, yn


def couple_ar(spec: ARSpec, x, y, rng: np.random.Generator):
    """Synchronous coupling: one noise draw shared by both chains."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    z = spec.noise.sample(rng, x.shape[0], spec.p)
    return ar_map(spec, x) + z, ar_map(spec, y) + z


def couple_pcn(spec: PcnSpec, x, y, rng: np.random.Generator):
    """Basic coupling: shared Gaussian proposal noise and shared uniform."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    z, u = spec.draw(rng, x.shape[0])
    return pcn_step(spec, x, z, u), pcn_step(spec, y, z, u)


def kernel_for(spec) -> Callable:
    """The default coupling kernel for a chain spec."""
    if isinstance(spec, LatticeSpec):
        fn = couple_srwm
    elif isinstance(spec, ARSpec):
        fn = couple_ar
    elif isinstance(spec, PcnSpec):
        fn = couple_pcn
    else:
        raise TypeError(f"no coupling kernel for {type(spec).__name__}")

    def kernel(x, y, rng):
        return fn(spec, x, y, rng)

    kernel.spec = spec
    return kernel


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class CoupledTrace:
    pairs: list
    dists: np.ndarray
    hitting_times: list
    coalesced_at: Optional[int]
    ell: int

    def renewal_index(self) -> np.ndarray:
        """Number of completed renewals at each time."""
        idx = np.zeros(self.dists.size, dtype=int)
        for t in self.hitting_times:
            idx[t:] += 1
        return idx

    def to_csv(self, path) -> None:
        from ._io import write_csv

        n = len(self.pairs)
        xs = [np.asarray(p[0]) for p in self.pairs]
        ys = [np.asarray(p[1]) for p in self.pairs]
        flat = lambda a: a.item() if a.size == 1 else ";".join(format(v, ".17g") for v in a.ravel())
        write_csv(
            path,
            ["n", "x", "y", "d", "renewal_index"],
            [range(n), [flat(a) for a in xs], [flat(b) for b in ys], self.dists[:n],
             self.renewal_index()[:n]],
        )


def simulate_coupled(
    kernel: Callable,
    pair0,
    n_steps: int,
    delta,
    ell: int,
    metric,
    rng: np.random.Generator,
) -> CoupledTrace:
    """Run one coupled trajectory and record renewal times into ``delta``.

    ``T_0`` is the first time ``n >= ell`` with the pair in ``delta``; each
    later renewal needs ``ell`` more steps (the dead time) before the next
    visit counts.  Under the trivial metric the run stops at coalescence and
    the remaining distances are zero.
    """
    if n_steps < 1 or ell < 1:
        raise ValueError("n_steps and ell must be at least 1")
    x, y = (np.asarray(v, dtype=float)[None, ...] for v in pair0)
    dists = np.zeros(n_steps + 1)
    dists[0] = float(metric(x, y)[0])
    pairs = [(x[0].copy(), y[0].copy())]
    hits: list[int] = []
    since = 0
    coalesced = 0 if dists[0] == 0 and isinstance(metric, Trivial) else None
    for n in range(1, n_steps + 1):
        if coalesced is not None:
            break
        x, y = kernel(x, y, rng)
        since += 1
        if since >= ell and bool(delta.contains(x, y)[0]):
            hits.append(n)
            since = 0
        dists[n] = float(metric(x, y)[0])
        pairs.append((x[0].copy(), y[0].copy()))
        if isinstance(metric, Trivial) and dists[n] == 0:
            coalesced = n
    return CoupledTrace(pairs, dists, hits, coalesced, ell)


def simulate_distances(
    kernel: Callable, pair0, n_steps: int, n_reps: int, metric, rng: np.random.Generator
) -> np.ndarray:
    """Distances ``d(X_n, Y_n)`` for ``n_reps`` replicates, shape ``(n_reps, n_steps+1)``.

    ``pair0`` may hold a single pair or per-replicate starting arrays.
    """
    x0, y0 = (np.asarray(v, dtype=float) for v in pair0)
    spec = getattr(kernel, "spec", None)
    scalar_states = isinstance(spec, LatticeSpec) if spec is not None else x0.ndim == 0
    shape = (n_reps,) if scalar_states else (n_reps, x0.shape[-1])
    x = np.broadcast_to(x0, shape).copy()
    y = np.broadcast_to(y0, shape).copy()
    out = np.empty((n_reps, n_steps + 1))
    out[:, 0] = metric(x, y)
    for n in range(1, n_steps + 1):
        x, y = kernel(x, y, rng)
        out[:, n] = metric(x, y)
    return out


# ---------------------------------------------------------------------------
# exact product chain on the lattice


def product_transition_matrix(spec: LatticeSpec) -> sp.csr_matrix:
    """Coupled kernel on pair index ``i * N + j`` with absorbing diagonal."""
    P = spec.transition_matrix()
    N = spec.n_states
    off = np.ones(N * N)
    diag_idx = np.arange(N) * (N + 1)
    off[diag_idx] = 0.0
    Q = sp.diags(off) @ sp.kron(P, P, format="csr")
    Pc = P.tocoo()
    D = sp.csr_matrix(
        (Pc.data, (Pc.row * (N + 1), Pc.col * (N + 1))), shape=(N * N, N * N)
    )
    return (Q + D).tocsr()


def _pair_membership(spec: LatticeSpec, delta) -> np.ndarray:
    xs = spec.states
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    return np.asarray(delta.contains(X.ravel(), Y.ravel()), dtype=bool)


@dataclass(frozen=True)
class ExactProductResult:
    dist_expectation: np.ndarray
    tail: np.ndarray  # tail[m, n] = P[T_m >= n]
    ell: int

    def tail_at(self, m: int, n: int) -> float:
        return float(self.tail[m, n])


def product_chain_exact(
    spec: LatticeSpec,
    pair0,
    n: int,
    delta,
    ell: int,
    m_max: int = 10,
    state_cap: float = 5e7,
) -> ExactProductResult:
    """Exact ``E[d0(X_k, Y_k)]`` and ``P[T_m >= k]`` for ``k <= n``, ``m <= m_max``.

    The pair distribution is augmented with the number of completed renewals
    (capped at ``m_max + 1``) and the steps since the last renewal (capped at
    ``ell``), and evolved exactly.
    """
    N = spec.n_states
    inside = _pair_membership(spec, delta)
    if inside.all():
        return _product_exact_everywhere(spec, pair0, n, ell, m_max)
    layers = (m_max + 2) * (ell + 1)
    if N * N * layers > state_cap:
        raise RuntimeError(
            f"augmented product space {N * N * layers:.3g} exceeds the cap {state_cap:.3g}"
        )
    Q = product_transition_matrix(spec)
    QT = Q.T.tocsr()
    diag_idx = np.arange(N) * (N + 1)
    offdiag = np.ones(N * N)
    offdiag[diag_idx] = 0.0
    # probability that one step from each pair lands on the diagonal
    absorb = np.asarray(Q[:, diag_idx].sum(axis=1)).ravel() * offdiag
    i0, j0 = int(spec.index(pair0[0])), int(spec.index(pair0[1]))

    # mass[c, s, pair]: c completed renewals, s steps since the last one
    mass = np.zeros((m_max + 2, ell + 1, N * N))
    mass[0, 0, i0 * N + j0] = 1.0
    dist = np.empty(n + 1)
    reached = np.zeros((m_max + 1, n + 1))
    dist[0] = offdiag[i0 * N + j0]
    for k in range(1, n + 1):
        # E[d0] drops by the absorbed flux; written this way it is monotone in floating point
        dist[k] = dist[k - 1] - float(mass.sum(axis=(0, 1)) @ absorb)
        flat = (QT @ mass.reshape(-1, N * N).T).T.reshape(mass.shape)
        new = np.zeros_like(mass)
        new[:, 1:ell] = flat[:, 0 : ell - 1]
        ripe = flat[:, ell - 1] + flat[:, ell]
        new[1:, 0] += ripe[:-1] * inside
        new[-1, 0] += ripe[-1] * inside
        new[:, ell] += ripe * ~inside
        mass = new
        total = mass.sum(axis=(1, 2))
        reached[:, k] = np.cumsum(total[::-1])[::-1][1:]
    tail = np.ones((m_max + 1, n + 1))
    tail[:, 1:] = 1.0 - reached[:, :-1]
    return ExactProductResult(dist, np.clip(tail, 0.0, 1.0), ell)


def _product_exact_everywhere(spec: LatticeSpec, pair0, n: int, ell: int, m_max: int) -> ExactProductResult:
    """Coupling set equal to the whole space: renewals fall at ``ell, 2 ell, ...`` deterministically."""
    N = spec.n_states
    QT = product_transition_matrix(spec).T.tocsr()
    diag_idx = np.arange(N) * (N + 1)
    offdiag = np.ones(N * N)
    offdiag[diag_idx] = 0.0
    absorb = np.asarray(QT[diag_idx, :].sum(axis=0)).ravel() * offdiag
    mass = np.zeros(N * N)
    mass[int(spec.index(pair0[0])) * N + int(spec.index(pair0[1]))] = 1.0
    dist = np.empty(n + 1)
    dist[0] = float(mass @ offdiag)
    for k in range(1, n + 1):
        dist[k] = dist[k - 1] - float(mass @ absorb)
        mass = QT @ mass
    k = np.arange(n + 1)
    tail = ((np.arange(m_max + 1)[:, None] + 1) * ell >= k[None, :]).astype(float)
    return ExactProductResult(dist, tail, ell)


def exact_epsilon(spec: LatticeSpec, delta, ell: int, state_cap: float = 4e6) -> dict:
    """``1 - max_{(x,y) in delta, x != y} Q^ell d0(x, y)`` computed exactly.

    Only ``ell`` steps are needed, so the computation runs on a sub-lattice
    covering ``delta`` plus ``ell`` sites; this gives the same answer as the
    full truncation as long as that sub-lattice does not hit the boundary.
    """
    members = spec.states[np.asarray(delta.contains(spec.states, spec.states), dtype=bool)]
    reach = int(np.max(np.abs(members)) / 0.25) + ell
    sub = LatticeSpec(spec.h, min(spec.K, reach), spec.s_exponent)
    N = sub.n_states
    if N * N > state_cap:
        raise RuntimeError(f"product sub-lattice with {N * N} pairs exceeds the cap {state_cap:.3g}")
    Q = product_transition_matrix(sub)
    f = np.ones(N * N)
    f[np.arange(N) * (N + 1)] = 0.0
    for _ in range(ell):
        f = Q @ f
    inside = _pair_membership(sub, delta)
    offdiag = np.ones(N * N, dtype=bool)
    offdiag[np.arange(N) * (N + 1)] = False
    sel = inside & offdiag
    worst = int(np.flatnonzero(sel)[np.argmax(f[sel])])
    xs = sub.states
    return {
        "epsilon": float(1.0 - f[worst]),
        "worst_pair": (float(xs[worst // N]), float(xs[worst % N])),
        "sublattice_K": sub.K,
    }


# ---------------------------------------------------------------------------
# Monte Carlo coupling-set verification


@dataclass(frozen=True)
class CouplingSetReport:
    epsilon_hat: float
    epsilon_lower: float
    ci: tuple
    weak_contraction_violations: int
    worst_pair: tuple
    ell: int
    n_pairs_in_delta: int
    per_pair: list = field(repr=False)

    def as_dict(self):
        return {
            "epsilon_hat": self.epsilon_hat,
            "epsilon_lower": self.epsilon_lower,
            "ci": list(self.ci),
            "weak_contraction_violations": self.weak_contraction_violations,
            "worst_pair": [np.asarray(v).tolist() for v in self.worst_pair],
            "ell": self.ell,
            "n_pairs_in_delta": self.n_pairs_in_delta,
        }


def verify_coupling_set(
    kernel: Callable,
    delta,
    ell: int,
    metric,
    sample_pairs: Sequence,
    n_reps: int,
    rng: np.random.Generator,
    confidence: float = 0.99,
) -> CouplingSetReport:
    """Monte Carlo check of the coupling-set contraction and weak contraction.

    For each pair ``(x, y)`` in ``delta`` the ratio
    ``E[d(X_ell, Y_ell)] / d(x, y)`` is estimated from ``n_reps`` coupled runs;
    ``epsilon_hat = 1 - max ratio`` and ``epsilon_lower`` subtracts a one-sided
    normal quantile times the standard error of that worst ratio.  The
    interval ``ci`` is the two-sided interval at the same confidence.
    Pairs with ``d(x, y) = 0`` are skipped.  Separately, every pair is
    checked for ``E[d(X_1, Y_1)] <= d(x, y) + 3 se``.
    """
    if not len(sample_pairs):
        raise ValueError("sample_pairs must be nonempty")
    z_one = norm.ppf(confidence)
    z_two = norm.ppf(0.5 + confidence / 2)
    def one(i, gen):
        x = np.asarray(sample_pairs[i][0], dtype=float)
        y = np.asarray(sample_pairs[i][1], dtype=float)
        d0 = float(metric(x[None, ...], y[None, ...])[0])
        d = simulate_distances(kernel, (x, y), ell, n_reps, metric, gen)
        inside = bool(delta.contains(x[None, ...], y[None, ...])[0])
        return x, y, d0, d[:, 1], d[:, ell], inside

    runs = rng.map(one, len(sample_pairs)) if hasattr(rng, "map") else [
        one(i, rng) for i in range(len(sample_pairs))]
    per_pair = []
    violations = 0
    worst = None
    for x, y, d0, one_step, last, inside in runs:
        se1 = one_step.std(ddof=1) / math.sqrt(n_reps)
        if one_step.mean() > d0 + 3.0 * se1 + 1e-15:
            violations += 1
        if d0 == 0 or not inside:
            continue
        ratio = last.mean() / d0
        se = last.std(ddof=1) / math.sqrt(n_reps) / d0
        rec = {"pair": (x, y), "ratio": ratio, "se": se}
        per_pair.append(rec)
        if worst is None or ratio > worst["ratio"]:
            worst = rec
    if worst is None:
        raise ValueError("no sampled pair lies in delta with positive distance")
    eps = 1.0 - worst["ratio"]
    return CouplingSetReport(
        epsilon_hat=eps,
        epsilon_lower=eps - z_one * worst["se"],
        ci=(eps - z_two * worst["se"], eps + z_two * worst["se"]),
        weak_contraction_violations=violations,
        worst_pair=worst["pair"],
        ell=ell,
        n_pairs_in_delta=len(per_pair),
        per_pair=per_pair,
    )
