"""The three Markov kernels: lattice random-walk Metropolis, nonlinear
autoregression and preconditioned Crank-Nicolson.

States are numpy arrays.  Lattice states are floats ``k/4`` (exact in binary
floating point); AR and pCN states are vectors of length ``p``.  All
stepping functions are vectorised over a leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import zeta

__all__ = [
    "LatticeSpec",
    "LatticeDist",
    "GaussianNoise",
    "TruncatedExpNoise",
    "ARSpec",
    "PcnSpec",
    "PowerLyapunov",
    "ExpNormLyapunov",
    "srwm_accept",
    "srwm_row",
    "srwm_evolve",
    "iterate_distribution",
    "ar_step",
    "ar_map",
    "pcn_step",
    "lyapunov_eval",
    "log_lyapunov_eval",
    "ar_lipschitz_ratio",
    "ar_contraction_constant",
    "ar_drift_constants",
]

LATTICE_STEP = 0.25


# ---------------------------------------------------------------------------
# Lyapunov functions


@dataclass(frozen=True)
class PowerLyapunov:
    """``V(x) = max(1, |x|^s)`` on the real line."""

    s: float

    def log(self, x) -> np.ndarray:
        ax = np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            return np.maximum(0.0, self.s * np.log(ax))

    def __call__(self, x) -> np.ndarray:
        return np.maximum(1.0, np.abs(np.asarray(x, dtype=float)) ** self.s)

    def as_dict(self):
        return {"kind": "power", "s": self.s}


@dataclass(frozen=True)
class ExpNormLyapunov:
    """``V(x) = exp(coef * ||x||^power)`` for vector states (last axis)."""

    coef: float
    power: float

    def log(self, x) -> np.ndarray:
        norm = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return self.coef * norm**self.power

    def __call__(self, x) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log(x))

    def as_dict(self):
        return {"kind": "exp_norm", "coef": self.coef, "power": self.power}


Lyapunov = Union[PowerLyapunov, ExpNormLyapunov]


# ---------------------------------------------------------------------------
# lattice random-walk Metropolis


@dataclass(frozen=True)
class LatticeSpec:
    """Random-walk Metropolis on ``{k/4 : |k| <= K}``.

    Target weights ``(1 + |x|)^-(1 + h)``; proposal uniform on
    ``{-1/4, 0, 1/4}``; proposals leaving the truncation are rejected.
    """

    h: float
    K: int
    s_exponent: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.h < 0.5:
            raise ValueError("h must lie in (0, 1/2)")
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        s = self.s_exponent
        if s is not None and not 2 < s < 2 + self.h:
            raise ValueError("s_exponent must lie in (2, 2 + h)")

    @property
    def n_states(self) -> int:
        return 2 * self.K + 1

    @property
    def states(self) -> np.ndarray:
        return np.arange(-self.K, self.K + 1) * LATTICE_STEP

    @property
    def xmax(self) -> float:
        return self.K * LATTICE_STEP

    def index(self, x) -> np.ndarray:
        k = np.rint(np.asarray(x, dtype=float) / LATTICE_STEP).astype(np.int64)
        if np.any(np.abs(k) > self.K) or np.any(k * LATTICE_STEP != np.asarray(x)):
            raise ValueError("state outside the truncated lattice")
        return k + self.K

    def stationary(self) -> "LatticeDist":
        w = (1.0 + np.abs(self.states)) ** (-(1.0 + self.h))
        return LatticeDist(w / w.sum())

    def truncation_mass(self) -> float:
        """Mass of the untruncated target outside ``[-K/4, K/4]``."""
        a = 1.0 + self.h
        tail = 4.0**a * zeta(a, self.K + 5)
        total = 1.0 + 2.0 * 4.0**a * zeta(a, 5)
        return float(2.0 * tail / total)

    def default_lyapunov(self) -> PowerLyapunov:
        s = self.s_exponent if self.s_exponent is not None else 2.0 + self.h / 2
        return PowerLyapunov(s)

    def transition_matrix(self) -> sp.csr_matrix:
        x = self.states
        up = np.where(x < self.xmax, srwm_accept(self, x, x + LATTICE_STEP) / 3.0, 0.0)
        down = np.where(x > -self.xmax, srwm_accept(self, x, x - LATTICE_STEP) / 3.0, 0.0)
        stay = 1.0 - up - down
        return sp.diags([down[1:], stay, up[:-1]], [-1, 0, 1], format="csr")

    def step(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        move = rng.integers(-1, 2, size=x.shape) * LATTICE_STEP
        u = rng.random(size=x.shape)
        return self._apply(x, move, u)

    def _apply(self, x, move, u):
        y = x + move
        inside = np.abs(y) <= self.xmax
        accept = inside & (u < srwm_accept(self, x, np.where(inside, y, x)))
        return np.where(accept, y, x)

    def as_dict(self):
        return {"chain": "srwm", "h": self.h, "K": self.K, "s_exponent": self.s_exponent}


@dataclass(frozen=True)
class LatticeDist:
    """Probability vector over the truncated lattice (index ``k + K``)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size % 2 == 0:
            raise ValueError("weights must be a vector of odd length 2K+1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be a probability vector")
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return (self.weights.size - 1) // 2

    @classmethod
    def point_mass(cls, spec: LatticeSpec, x: float) -> "LatticeDist":
        w = np.zeros(spec.n_states)
        w[spec.index(x)] = 1.0
        return cls(w)

    def expect(self, f_values: np.ndarray) -> float:
        return float(self.weights @ f_values)


def srwm_accept(spec: LatticeSpec, x, y):
    """Metropolis acceptance ``1 ^ ((1+|x|)/(1+|y|))^(1+h)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ratio = ((1.0 + np.abs(x)) / (1.0 + np.abs(y))) ** (1.0 + spec.h)
    out = np.minimum(1.0, ratio)
    return float(out) if out.ndim == 0 else out


def srwm_row(spec: LatticeSpec, x: float) -> LatticeDist:
    """Exact transition row from ``x`` as a full probability vector."""
    i = int(spec.index(x))
    row = spec.transition_matrix().getrow(i).toarray().ravel()
    return LatticeDist(row)


def iterate_distribution(spec: LatticeSpec, init: LatticeDist, n: int) -> Iterator[np.ndarray]:
    """Yield ``init P^k`` for ``k = 0, ..., n`` as arrays."""
    PT = spec.transition_matrix().T.tocsr()
    p = init.weights.copy()
    yield p
    for _ in range(n):
        p = PT @ p
        yield p


def srwm_evolve(
    spec: LatticeSpec, init: LatticeDist, n: int, work_cap: float = 1e10
) -> LatticeDist:
    """Exact ``init P^n`` by sparse vector-matrix products."""
    if init.weights.size != spec.n_states:
        raise ValueError("distribution and spec truncations differ")
    if n * spec.n_states > work_cap:
        raise RuntimeError(f"n*(2K+1) = {n * spec.n_states:.3g} exceeds work cap {work_cap:.3g}")
    p = init.weights
    for p in iterate_distribution(spec, init, n):
        pass
    p = np.maximum(p, 0.0)
    return LatticeDist(p / p.sum())


# ---------------------------------------------------------------------------
# nonlinear autoregression


@dataclass(frozen=True)
class GaussianNoise:
    """Isotropic centred Gaussian noise ``sigma * N(0, I)``."""

    sigma: float = 1.0
    #: stretched-exponential moment order certified for this law
    kappa0: float = 1.0

    def sample(self, rng: np.random.Generator, size: int, p: int) -> np.ndarray:
        return self.sigma * rng.standard_normal((size, p))

    def as_dict(self):
        return {"kind": "gaussian", "sigma": self.sigma}


@dataclass(frozen=True)
class TruncatedExpNoise:
    """Radially symmetric noise with stretched-exponential radius.

    ``||Z||^kappa0`` is exponential with rate ``2 beta0`` (so
    ``E exp(beta0 ||Z||^kappa0) = 2``), optionally truncated at
    ``radius_max``; the direction is uniform on the sphere.
    """

    beta0: float
    kappa0: float
    radius_max: float = math.inf

    def __post_init__(self):
        if not self.beta0 > 0 or not 0 < self.kappa0 <= 1:
            raise ValueError("TruncatedExpNoise needs beta0 > 0 and kappa0 in (0, 1]")

    def sample(self, rng: np.random.Generator, size: int, p: int) -> np.ndarray:
        direction = rng.standard_normal((size, p))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        cap = 1.0
        if math.isfinite(self.radius_max):
            cap = -math.expm1(-2.0 * self.beta0 * self.radius_max**self.kappa0)
        u = rng.random(size)
        w = -np.log1p(-u * cap) / (2.0 * self.beta0)
        return direction * (w ** (1.0 / self.kappa0))[:, None]

    def as_dict(self):
        return {
            "kind": "truncated_exp",
            "beta0": self.beta0,
            "kappa0": self.kappa0,
            "radius_max": self.radius_max,
        }


Noise = Union[GaussianNoise, TruncatedExpNoise]


@dataclass(frozen=True)
class ARSpec:
    """``X' = g(X) + Z`` with ``g(x) = x max(1/2, 1 - ||x||^-rho_ar)``."""

    p: int
    rho_ar: float
    noise: Noise = field(default_factory=GaussianNoise)
    beta: float = 0.1

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("dimension p must be positive")
        if not 0 <= self.rho_ar < 2:
            raise ValueError("rho_ar must lie in [0, 2)")
        if not self.beta > 0:
            raise ValueError("Lyapunov exponent beta must be positive")

    @property
    def v_power(self) -> float:
        return min(self.noise.kappa0, 2.0 - self.rho_ar)

    def default_lyapunov(self) -> ExpNormLyapunov:
        return ExpNormLyapunov(self.beta, self.v_power)

    def step(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return ar_step(self, x, self.noise.sample(rng, x.shape[0], self.p))

    def as_dict(self):
        return {"chain": "ar", "p": self.p, "rho_ar": self.rho_ar, "beta": self.beta,
                "noise": self.noise.as_dict()}


def ar_map(spec: ARSpec, x) -> np.ndarray:
    """The deterministic part ``g``."""
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        shrink = np.where(norm > 0, 1.0 - norm ** (-spec.rho_ar), 0.0)
    return x * np.maximum(0.5, shrink)


def ar_step(spec: ARSpec, x, noise_draw) -> np.ndarray:
    """``g(x) + z``."""
    return ar_map(spec, x) + np.asarray(noise_draw, dtype=float)


def ar_lipschitz_ratio(spec: ARSpec, x, y) -> np.ndarray:
    """``||g(x) - g(y)|| / ||x - y||`` for paired rows of ``x`` and ``y``."""
    num = np.linalg.norm(ar_map(spec, x) - ar_map(spec, y), axis=-1)
    den = np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1)
    return num / den


def ar_contraction_constant(
    spec: ARSpec, M: float, n_pairs: int, rng: np.random.Generator
) -> float:
    """Largest sampled Lipschitz ratio of ``g`` over pairs in ``B(0, M)``.

    Half the pairs are uniform in the ball, half are close pairs, which
    probe the local derivative.
    """
    x = _uniform_ball(rng, n_pairs, spec.p, M)
    y = _uniform_ball(rng, n_pairs, spec.p, M)
    half = n_pairs // 2
    y[:half] = x[:half] + 1e-3 * M * _uniform_ball(rng, half, spec.p, 1.0)
    norms = np.linalg.norm(y[:half], axis=1, keepdims=True)
    y[:half] *= np.minimum(1.0, M / norms)
    keep = np.linalg.norm(x - y, axis=1) > 0
    return float(np.max(ar_lipschitz_ratio(spec, x[keep], y[keep])))


def ar_drift_constants(spec: ARSpec, r_max: float = 1e4, n: int = 4000) -> dict:
    """Radial scan for the constants ``(r, M0)`` of ``||g(x)|| <= ||x||(1 - r||x||^-rho)``."""
    radii = np.geomspace(1e-3, r_max, n)
    x = np.zeros((n, spec.p))
    x[:, 0] = radii
    ratio = np.linalg.norm(ar_map(spec, x), axis=1) / radii
    gain = (1.0 - ratio) * radii**spec.rho_ar
    m0 = 2.0 ** (1.0 / spec.rho_ar) if spec.rho_ar > 0 else 1.0
    beyond = radii >= m0
    return {"M0": m0, "r": float(gain[beyond].min()), "scan_max_radius": r_max}


def _uniform_ball(rng, n, p, radius):
    d = rng.standard_normal((n, p))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.random(n) ** (1.0 / p))[:, None]


# ---------------------------------------------------------------------------
# preconditioned Crank-Nicolson


@dataclass(frozen=True)
class PcnSpec:
    """pCN targeting ``exp(-g) dgamma`` with ``gamma = N(0, diag(eigs))``.

    The built-in potential is ``g(x) = -Cg ||x||^beta``; a custom callable
    ``potential`` with declared Holder constant ``Cg`` may be supplied.
    """

    p: int
    rho: float
    eigs: tuple
    beta: float = 0.5
    Cg: float = 1.0
    theta: Optional[float] = None
    potential: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        eigs = np.asarray(self.eigs, dtype=float)
        if eigs.shape != (self.p,) or np.any(eigs <= 0):
            raise ValueError("eigs must hold p positive covariance eigenvalues")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        bound = 1.0 / (2.0 * eigs.max())
        theta = self.theta if self.theta is not None else 0.8 * bound
        if not 0 < theta < bound:
            raise ValueError(f"theta must lie in (0, {bound}) for a finite Fernique integral")
        object.__setattr__(self, "eigs", tuple(float(e) for e in eigs))
        object.__setattr__(self, "theta", float(theta))

    @property
    def s_pcn(self) -> float:
        return (1.0 - self.rho) ** 2 * self.theta / 16.0

    @property
    def drift_kappa(self) -> float:
        """Exponent scale of the pCN drift rate, ``theta Cg^(-2/beta) / 36``."""
        return self.theta * self.Cg ** (-2.0 / self.beta) / 36.0

    def g(self, x) -> np.ndarray:
        if self.potential is not None:
            return np.asarray(self.potential(np.asarray(x, dtype=float)))
        return -self.Cg * np.linalg.norm(np.asarray(x, dtype=float), axis=-1) ** self.beta

    def default_lyapunov(self) -> ExpNormLyapunov:
        return ExpNormLyapunov(self.s_pcn, 2.0)

    def draw(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        z = rng.standard_normal((size, self.p)) * np.sqrt(np.asarray(self.eigs))
        u = rng.random(size)
        return z, u

    def step(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z, u = self.draw(rng, x.shape[0])
        return pcn_step(self, x, z, u)

    def as_dict(self):
        return {"chain": "pcn", "p": self.p, "rho": self.rho, "eigs": list(self.eigs),
                "beta": self.beta, "Cg": self.Cg, "theta": self.theta}


def pcn_accept(spec: PcnSpec, x, y) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.minimum(1.0, np.exp(spec.g(x) - spec.g(y)))


def pcn_step(spec: PcnSpec, x, z, u) -> np.ndarray:
    """One pCN move with explicit draws ``z`` (Gaussian) and ``u`` (uniform)."""
    x = np.asarray(x, dtype=float)
    y = spec.rho * x + math.sqrt(1.0 - spec.rho**2) * np.asarray(z, dtype=float)
    accept = np.asarray(u) <= pcn_accept(spec, x, y)
    return np.where(np.expand_dims(accept, -1), y, x)


# ---------------------------------------------------------------------------


def lyapunov_eval(chain, x, V: Optional[Lyapunov] = None):
    """``V(x)`` with the chain's default Lyapunov function."""
    V = V or chain.default_lyapunov()
    out = np.asarray(V(x))
    return float(out) if out.ndim == 0 else out


def log_lyapunov_eval(chain, x, V: Optional[Lyapunov] = None):
    """``log V(x)``; use when ``V`` may overflow."""
    V = V or chain.default_lyapunov()
    out = np.asarray(V.log(x))
    return float(out) if out.ndim == 0 else out
