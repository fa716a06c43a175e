"""Rate-function calculus.

Concave rate families ``phi``, the transform ``H(t) = int_1^t ds / phi(s)``
and its inverse, the induced rate ``r = phi o Hinv``, the cumulative rate
``R = 1 + int r`` (which equals ``Hinv``), the shifted maps ``H_k`` and the
constants that control sub-multiplicativity of ``r`` and ``R``.

Internally everything is evaluated in the logarithmic variable ``v = log t``,
which keeps the stretched-exponential inverses representable long after
``Hinv`` itself overflows.
"""

from __future__ import annotations

import dataclasses
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ConcaveRate",
    "Logarithmic",
    "Polynomial",
    "Subexponential",
    "PcnDrift",
    "Extended",
    "RateKit",
    "SubgeomConstants",
    "QuadratureError",
    "InversionError",
    "CertificationError",
    "adaptive_simpson",
    "phi_eval",
    "build_rate_kit",
    "r_phi",
    "H_k",
    "extend_concave",
    "subgeom_constants",
    "write_rate_table",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance."""


class InversionError(RuntimeError):
    """Root bracketing for ``Hinv`` failed."""


class CertificationError(RuntimeError):
    """A grid-certified constant could not be certified at the horizon."""


# ---------------------------------------------------------------------------
# quadrature


def adaptive_simpson(
    f: Callable[[np.ndarray], np.ndarray],
    edges: Sequence[float],
    atol: float = 1e-10,
    rtol: float = 1e-13,
    max_level: int = 60,
) -> np.ndarray:
    """Integrate ``f`` over each interval ``[edges[i], edges[i+1]]``.

    Breadth-first adaptive Simpson: every refinement level evaluates ``f``
    once on a batch of abscissae, so ``f`` must accept arrays.  An interval
    is accepted when the Richardson error estimate is below
    ``max(atol * width, rtol * |estimate|)``.

    Returns
    -------
    ndarray
        One integral per interval.
    """
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1].copy(), edges[1:].copy()
    n = a.size
    out = np.zeros(n)
    if n == 0:
        return out
    owner = np.arange(n)
    m = 0.5 * (a + b)
    vals = f(np.concatenate([a, m, b]))
    fa, fm, fb = vals[:n], vals[n : 2 * n], vals[2 * n :]
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    tol = atol * (b - a)
    for _ in range(max_level):
        m = 0.5 * (a + b)
        k = a.size
        inner = f(np.concatenate([0.5 * (a + m), 0.5 * (m + b)]))
        flm, frm = inner[:k], inner[k:]
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        est = left + right
        err = est - whole
        ok = np.abs(err) <= 15.0 * np.maximum(tol, rtol * np.abs(est))
        np.add.at(out, owner[ok], (est + err / 15.0)[ok])
        if ok.all():
            return out
        bad = ~ok
        a, m, b = a[bad], m[bad], b[bad]
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
        fa, fm, fb = (
            np.concatenate([fa[bad], fm[bad]]),
            np.concatenate([flm[bad], frm[bad]]),
            np.concatenate([fm[bad], fb[bad]]),
        )
        whole = np.concatenate([left[bad], right[bad]])
        tol = np.concatenate([tol[bad], tol[bad]]) / 2.0
        owner = np.concatenate([owner[bad], owner[bad]])
    raise QuadratureError(
        f"adaptive Simpson did not converge on {np.unique(owner).size} interval(s), "
        f"first at [{edges[owner[0]]}, {edges[owner[0] + 1]}]"
    )


# ---------------------------------------------------------------------------
# concave rate families


def _as_out(x: np.ndarray, like) -> float | np.ndarray:
    return float(x) if np.ndim(like) == 0 else x


def _extension_coeffs(value: float, slope: float, M: float) -> tuple[float, float]:
    """Coefficients (A, B) of ``A t + B sqrt(t)`` matching value and slope at M."""
    lin = 2.0 * slope - value / M
    root = 2.0 * (value - M * slope) / math.sqrt(M)
    if root < 0.0:
        raise ValueError(
            f"extension at M={M} is decreasing near 0 (sqrt coefficient {root:.3g} < 0); "
            "phi(M) < M phi'(M), so no concave extension through the origin exists"
        )
    return lin, root


class ConcaveRate:
    """Base class for concave increasing rate functions ``phi``.

    Subclasses are frozen dataclasses carrying a positive ``scale``
    multiplier.  ``eval`` and ``deriv`` are vectorised; ``log_eval`` takes
    ``v = log t`` with ``t >= 1`` and never overflows.
    """

    scale: float
    #: smallest admissible argument of ``eval``
    domain_min: float = 1.0
    #: True when ``phi(0) = 0`` is part of the definition
    zero_at_origin: bool = False

    # subclass hooks -------------------------------------------------------
    def _eval(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _deriv(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _log_eval(self, v: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self._eval(np.exp(v)))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points ``log t`` where the definition switches branch."""
        return ()

    # public API -----------------------------------------------------------
    def _check(self, t) -> np.ndarray:
        arr = np.asarray(t, dtype=float)
        if np.any(arr < self.domain_min) or np.any(np.isnan(arr)):
            raise ValueError(
                f"{type(self).__name__} is defined for t >= {self.domain_min}, "
                f"got min t = {np.min(arr)}"
            )
        return arr

    def eval(self, t):
        arr = self._check(t)
        return _as_out(self.scale * self._eval(arr), t)

    def deriv(self, t):
        arr = self._check(t)
        return _as_out(self.scale * self._deriv(arr), t)

    def log_eval(self, v):
        arr = np.asarray(v, dtype=float)
        if np.any(arr < 0):
            raise ValueError("log_eval expects v = log t >= 0")
        return _as_out(math.log(self.scale) + self._log_eval(arr), v)

    def __call__(self, t):
        return self.eval(t)

    def scaled(self, c: float) -> "ConcaveRate":
        """Return ``c * phi``."""
        if c <= 0:
            raise ValueError("scale multiplier must be positive")
        return dataclasses.replace(self, scale=self.scale * c)

    def inverse(self, y: float) -> float:
        """Solve ``phi(t) = y`` for ``t`` by bracketed root finding."""
        if y <= 0:
            if self.zero_at_origin and y == 0:
                return 0.0
            raise ValueError("phi^{-1}(y) needs y > 0")
        at_one = float(self.eval(1.0))
        if y <= at_one:
            if not self.zero_at_origin and y < at_one:
                raise ValueError(f"y={y} below phi(1)={at_one}")
            if y == at_one:
                return 1.0
            return brentq(lambda t: float(self.eval(t)) - y, 0.0, 1.0, xtol=1e-15, rtol=1e-14)
        target = math.log(y)
        hi = 1.0
        while float(self.log_eval(hi)) < target:
            hi *= 2.0
            if hi > 1e6:
                raise ValueError(f"phi^{{-1}}({y}) beyond exp(1e6)")
        v = brentq(lambda s: float(self.log_eval(s)) - target, 0.0, hi, xtol=1e-15, rtol=1e-15)
        return math.exp(v)

    def as_dict(self) -> dict:
        d = {"family": type(self).__name__}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            d[f.name] = val.as_dict() if isinstance(val, ConcaveRate) else val
        return d


@dataclass(frozen=True)
class Logarithmic(ConcaveRate):
    """``phi(t) = (1 + log t)^kappa`` on ``t >= 1``."""

    kappa: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("Logarithmic needs kappa > 0")

    def _eval(self, t):
        return (1.0 + np.log(t)) ** self.kappa

    def _deriv(self, t):
        return self.kappa * (1.0 + np.log(t)) ** (self.kappa - 1.0) / t

    def _log_eval(self, v):
        return self.kappa * np.log1p(v)


@dataclass(frozen=True)
class Polynomial(ConcaveRate):
    """``phi(t) = t^kappa`` with ``0 < kappa < 1``; defined down to 0."""

    kappa: float
    scale: float = 1.0
    domain_min = 0.0
    zero_at_origin = True

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValueError("Polynomial needs kappa in (0, 1)")

    def _eval(self, t):
        return t**self.kappa

    def _deriv(self, t):
        with np.errstate(divide="ignore"):
            return self.kappa * t ** (self.kappa - 1.0)

    def _log_eval(self, v):
        return self.kappa * v


@dataclass(frozen=True)
class Subexponential(ConcaveRate):
    """``phi(t) = t / (1 + log t)^kappa`` on ``t >= 1``."""

    kappa: float
    scale: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("Subexponential needs kappa > 0")

    def _eval(self, t):
        return t / (1.0 + np.log(t)) ** self.kappa

    def _deriv(self, t):
        lg = 1.0 + np.log(t)
        return lg ** (-self.kappa) - self.kappa * lg ** (-self.kappa - 1.0)

    def _log_eval(self, v):
        return v - self.kappa * np.log1p(v)


@dataclass(frozen=True)
class PcnDrift(ConcaveRate):
    """``phi(t) = c t exp(-(log t / kappa)^(beta/2))`` for ``t >= M``.

    ``M`` is the larger of ``e`` and the point past which the formula is
    concave (for small ``kappa`` it is convex just above ``e``).  Below ``M``
    the function is continued by the concave two-term extension, so
    ``phi(0) = 0``.
    """

    c: float
    kappa: float
    beta: float
    scale: float = 1.0
    domain_min = 0.0
    zero_at_origin = True

    def __post_init__(self):
        if not self.c > 0 or not self.kappa > 0 or not 0 < self.beta <= 1:
            raise ValueError("PcnDrift needs c > 0, kappa > 0, beta in (0, 1]")
        M = self._concave_from()
        object.__setattr__(self, "_M", M)
        object.__setattr__(
            self, "_coeffs", _extension_coeffs(self._raw(M), self._raw_deriv(M), M)
        )

    def _concave_from(self) -> float:
        v = np.linspace(1.0, 60.0, 59 * 512 + 1)
        slopes = self._raw_deriv(np.exp(v))
        rising = np.flatnonzero(np.diff(slopes) > 0)
        if rising.size == 0:
            return math.e
        lo, hi = v[rising[-1]], v[min(rising[-1] + 2, v.size - 1)]
        # last sign change of the second derivative, by bisection on the log grid
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            h = 1e-7 * max(1.0, mid)
            if self._raw_deriv(math.exp(mid + h)) > self._raw_deriv(math.exp(mid)):
                lo = mid
            else:
                hi = mid
        return math.exp(hi)

    @property
    def join(self) -> float:
        """Point where the formula takes over from the extension."""
        return self._M

    def _raw(self, t):
        return self.c * t * np.exp(-((np.log(t) / self.kappa) ** (self.beta / 2)))

    def _raw_deriv(self, t):
        lg = np.log(t)
        w = (lg / self.kappa) ** (self.beta / 2)
        return self.c * np.exp(-w) * (1.0 - 0.5 * self.beta * w / lg)

    def _eval(self, t):
        lin, root = self._coeffs
        hi = np.maximum(t, self._M)
        return np.where(t >= self._M, self._raw(hi), lin * t + root * np.sqrt(t))

    def _deriv(self, t):
        lin, root = self._coeffs
        hi = np.maximum(t, self._M)
        with np.errstate(divide="ignore"):
            low = lin + 0.5 * root / np.sqrt(t)
        return np.where(t >= self._M, self._raw_deriv(hi), low)

    def _log_eval(self, v):
        lin, root = self._coeffs
        vM = math.log(self._M)
        hi = np.maximum(v, vM)
        tail = math.log(self.c) + hi - (hi / self.kappa) ** (self.beta / 2)
        lo = np.minimum(v, vM)
        head = np.log(lin * np.exp(lo) + root * np.exp(0.5 * lo))
        return np.where(v >= vM, tail, head)

    @property
    def breakpoints(self):
        return (math.log(self._M),)


@dataclass(frozen=True)
class Extended(ConcaveRate):
    """Concave continuation of ``base`` below ``M`` through the origin.

    For ``t < M`` the value is ``A t + B sqrt(t)`` with ``A, B`` chosen so
    that value and slope match ``base`` at ``M``.
    """

    base: ConcaveRate
    M: float
    scale: float = 1.0
    domain_min = 0.0
    zero_at_origin = True

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("extension point M must be positive")
        if self.M < self.base.domain_min:
            raise ValueError(f"base is undefined at M={self.M}")
        value = float(self.base.eval(self.M))
        slope = float(self.base.deriv(self.M))
        if slope < 0:
            raise ValueError(f"base is decreasing at M={self.M}")
        grid = self.M * np.geomspace(1.0, 1e4, 400)
        slopes = np.asarray(self.base.deriv(grid), dtype=float)
        if np.any(np.diff(slopes) > 1e-12 * np.abs(slopes[:-1]).max()):
            raise ValueError(f"base is not concave on [M, inf) for M={self.M}")
        object.__setattr__(self, "_coeffs", _extension_coeffs(value, slope, self.M))

    @property
    def coefficients(self) -> tuple[float, float]:
        return self._coeffs

    def _eval(self, t):
        lin, root = self._coeffs
        hi = np.maximum(t, self.M)
        return np.where(t >= self.M, self.base.eval(hi), lin * t + root * np.sqrt(t))

    def _deriv(self, t):
        lin, root = self._coeffs
        hi = np.maximum(t, self.M)
        with np.errstate(divide="ignore"):
            low = lin + 0.5 * root / np.sqrt(t)
        return np.where(t >= self.M, self.base.deriv(hi), low)

    def _log_eval(self, v):
        lin, root = self._coeffs
        logM = math.log(self.M)
        hi = np.maximum(v, max(logM, 0.0))
        tail = self.base.log_eval(hi)
        lo = np.minimum(v, logM)
        with np.errstate(divide="ignore"):
            head = np.log(lin * np.exp(lo) + root * np.exp(0.5 * lo))
        return np.where(v >= logM, tail, head)

    @property
    def breakpoints(self):
        return (math.log(self.M),) if self.M > 1 else ()


def phi_eval(phi: ConcaveRate, t):
    """Evaluate ``phi(t)``; raises ``ValueError`` outside the family's domain."""
    return phi.eval(t)


def extend_concave(phi: ConcaveRate, M: float) -> Extended:
    """Continue ``phi`` below ``M`` so that the result is concave with ``phi(0) = 0``."""
    return Extended(phi, M)


# ---------------------------------------------------------------------------
# rate kit

_PANEL = 1.0 / 64.0


class _LogTable:
    """Cumulative table of ``H(e^v)`` on a uniform grid in ``v``."""

    def __init__(self, phi: ConcaveRate, quad_tol: float):
        self.phi = phi
        self.quad_tol = quad_tol
        self.v = np.zeros(1)
        self.H = np.zeros(1)
        self._lock = threading.Lock()
        self.extend(8.0)

    def integrand(self, v):
        return np.exp(v - self.phi.log_eval(v))

    def extend(self, v_target: float):
        with self._lock:
            if self.v[-1] >= v_target:
                return
            start = self.v[-1]
            stop = max(v_target, 2.0 * start, 8.0) + _PANEL
            knots = np.arange(start, stop + _PANEL, _PANEL)
            bps = [p for p in self.phi.breakpoints if start < p < knots[-1]]
            if bps:
                knots = np.union1d(knots, bps)
            pieces = adaptive_simpson(self.integrand, knots, atol=self.quad_tol)
            self.H = np.concatenate([self.H, self.H[-1] + np.cumsum(pieces)])
            self.v = np.concatenate([self.v, knots[1:]])

    def ensure_v(self, v_max: float):
        if v_max > 1e5:
            raise InversionError(f"log t = {v_max} exceeds the table range")
        if self.v[-1] < v_max:
            self.extend(v_max)

    def ensure_H(self, u_max: float):
        while self.H[-1] < u_max:
            if self.v[-1] > 1e5:
                raise InversionError(f"Hinv({u_max}): no bracket up to log t = 1e5")
            self.extend(2.0 * self.v[-1])

    def partial(self, j: np.ndarray, v: np.ndarray) -> np.ndarray:
        lo = self.v[j]
        mid = 0.5 * (lo + v)
        g = self.integrand
        return self.H[j] + (v - lo) / 6.0 * (g(lo) + 4.0 * g(mid) + g(v))

    def H_of_v(self, v: np.ndarray) -> np.ndarray:
        self.ensure_v(float(np.max(v, initial=0.0)))
        j = np.clip(np.searchsorted(self.v, v, side="right") - 1, 0, self.v.size - 2)
        return self.partial(j, v)

    def v_of_H(self, u: np.ndarray, inv_tol: float) -> np.ndarray:
        self.ensure_H(float(np.max(u, initial=0.0)))
        j = np.clip(np.searchsorted(self.H, u, side="right") - 1, 0, self.v.size - 2)
        lo, v = self.v[j], self.v[j + 1].copy()
        for _ in range(200):
            step = (self.partial(j, v) - u) / self.integrand(v)
            new = np.maximum(v - step, lo)
            done = np.abs(new - v) <= inv_tol * np.maximum(1.0, v)
            v = new
            if done.all():
                return v
        bad = np.flatnonzero(~done)[0]
        raise InversionError(f"Newton did not converge for Hinv({u.flat[bad]})")


class RateKit:
    """``H``, ``Hinv``, ``r`` and ``R`` for one concave rate ``phi``.

    Parameters
    ----------
    phi : ConcaveRate
    quad_tol : float
        Absolute quadrature tolerance per unit interval of ``log t``.
    inv_tol : float
        Tolerance on ``log Hinv`` (so relative tolerance on ``Hinv``).
    force_quadrature : bool
        Ignore closed forms; used to cross-check them.
    """

    def __init__(
        self,
        phi: ConcaveRate,
        quad_tol: float = 1e-10,
        inv_tol: float = 1e-13,
        force_quadrature: bool = False,
    ):
        self.phi = phi
        self.quad_tol = quad_tol
        self.inv_tol = inv_tol
        closed = not force_quadrature and isinstance(phi, (Polynomial, Subexponential))
        self.closed_form = {"H": closed, "Hinv": closed, "r": closed, "R": closed}
        self._table = None if closed else _LogTable(phi, quad_tol)

    # log-variable core ------------------------------------------------------
    def H_log(self, v):
        """``H(e^v)``."""
        arr = np.asarray(v, dtype=float)
        if np.any(arr < 0):
            raise ValueError("H is defined on t >= 1")
        phi = self.phi
        if self._table is not None:
            out = self._table.H_of_v(arr)
        elif isinstance(phi, Polynomial):
            out = np.expm1((1.0 - phi.kappa) * arr) / ((1.0 - phi.kappa) * phi.scale)
        else:
            k1 = phi.kappa + 1.0
            out = np.expm1(k1 * np.log1p(arr)) / (k1 * phi.scale)
        return _as_out(out, v)

    def log_Hinv(self, u):
        """``log Hinv(u)``; finite even where ``Hinv`` overflows."""
        arr = np.asarray(u, dtype=float)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise ValueError("Hinv is defined on u >= 0")
        phi = self.phi
        if self._table is not None:
            out = np.where(arr == 0, 0.0, self._table.v_of_H(arr, self.inv_tol))
        elif isinstance(phi, Polynomial):
            k = 1.0 - phi.kappa
            out = np.log1p(k * phi.scale * arr) / k
        else:
            k1 = phi.kappa + 1.0
            out = np.expm1(np.log1p(k1 * phi.scale * arr) / k1)
        return _as_out(out, u)

    # public maps ------------------------------------------------------------
    def H(self, t):
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 1):
            raise ValueError("H is defined on t >= 1")
        return _as_out(np.asarray(self.H_log(np.log(arr))), t)

    def Hinv(self, u):
        with np.errstate(over="ignore"):
            return _as_out(np.exp(self.log_Hinv(u)), u)

    def R(self, t):
        """Cumulative rate; identical to ``Hinv``."""
        return self.Hinv(t)

    def log_r(self, t):
        return self.phi.log_eval(self.log_Hinv(t))

    def r(self, t):
        with np.errstate(over="ignore"):
            return _as_out(np.exp(self.log_r(t)), t)

    def R_integral(self, ts) -> np.ndarray:
        """``1 + int_0^t r(s) ds`` by adaptive quadrature, for sorted ``ts``."""
        ts = np.asarray(ts, dtype=float)
        if np.any(np.diff(ts) < 0) or np.any(ts < 0):
            raise ValueError("R_integral expects sorted nonnegative points")
        edges = np.concatenate([[0.0], ts])
        pieces = adaptive_simpson(
            lambda s: np.asarray(self.r(s)), edges, atol=self.quad_tol, rtol=1e-13
        )
        return 1.0 + np.cumsum(pieces)

    def H_k(self, k: float, u):
        return H_k(self, k, u)

    def tabulate(self, ts) -> dict[str, np.ndarray]:
        ts = np.asarray(ts, dtype=float)
        return {
            "t": ts,
            "H": np.asarray(self.H(np.maximum(ts, 1.0))),
            "Hinv": np.asarray(self.Hinv(ts)),
            "r": np.asarray(self.r(ts)),
            "R": np.asarray(self.R(ts)),
        }


def build_rate_kit(
    phi: ConcaveRate,
    quad_tol: float = 1e-10,
    inv_tol: float = 1e-13,
    force_quadrature: bool = False,
) -> RateKit:
    """Construct the :class:`RateKit` of ``phi``."""
    return RateKit(phi, quad_tol=quad_tol, inv_tol=inv_tol, force_quadrature=force_quadrature)


def r_phi(kit: RateKit, t):
    """``phi(Hinv(t))``, the derivative of ``Hinv``."""
    return kit.r(t)


def H_k(kit: RateKit, k: float, u):
    """``Hinv(H(u) + k) - Hinv(k)``.

    Note ``H_0(u) = u - 1`` because ``Hinv(0) = 1``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    return kit.Hinv(np.asarray(kit.H(u)) + k) - kit.Hinv(float(k))


def write_rate_table(kit: RateKit, ts, path) -> None:
    """Write ``t,H,Hinv,r,R`` rows to ``path``."""
    from ._io import write_csv

    tab = kit.tabulate(ts)
    write_csv(path, ["t", "H", "Hinv", "r", "R"], [tab[c] for c in ("t", "H", "Hinv", "r", "R")])


# ---------------------------------------------------------------------------
# subgeometric constants


@dataclass(frozen=True)
class SubgeomConstants:
    """Grid-certified constants of the rate ``r`` (see ``subgeom_constants``)."""

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    r0_spec: str
    grid_horizon: float
    r_step_ratio: float
    kappa_values: dict
    tail_justification: str
    kit: RateKit = field(repr=False, compare=False)

    def mkappa(self, kappa: float) -> float:
        """Smallest ``M`` with ``r(t) <= kappa R(t)`` for all ``t >= M``."""
        return mkappa(self.kit, kappa)[0]

    def log_r_at_mkappa(self, kappa: float) -> float:
        return mkappa(self.kit, kappa)[1]

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "kit"}
        d["kappa_values"] = {str(k): v for k, v in self.kappa_values.items()}
        return d


def mkappa(kit: RateKit, kappa: float) -> tuple[float, float]:
    """Return ``(M_kappa, log r(M_kappa))``.

    ``r(t)/R(t) = phi(s)/s`` with ``s = Hinv(t)``, and ``phi(s)/s`` is
    nonincreasing for concave ``phi`` with ``phi(0) >= 0``; so ``M_kappa``
    is ``H`` of the root of ``log phi(e^v) - v = log kappa``.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    phi = kit.phi
    target = math.log(kappa)

    def gap(v):
        return float(phi.log_eval(v)) - v - target

    if gap(0.0) <= 0:
        return 0.0, float(phi.log_eval(0.0))
    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e6:
            raise CertificationError(f"M_kappa for kappa={kappa} beyond log t = 1e6")
    v = brentq(gap, 0.0, hi, xtol=1e-14, rtol=1e-15)
    return float(kit.H_log(v)), float(phi.log_eval(v))


def _tail_nonincreasing(profile: np.ndarray, frac: float = 0.25, rtol: float = 1e-10) -> bool:
    tail = profile[int((1.0 - frac) * profile.size) :]
    return bool(np.all(np.diff(tail) <= rtol * np.abs(tail[:-1]) + 1e-300))


def _pair_grid(horizon: int) -> np.ndarray:
    head = np.arange(0, min(horizon, 64) + 1)
    geo = np.unique(np.round(np.geomspace(1, horizon, 160)).astype(int))
    return np.union1d(head, geo).astype(float)


def subgeom_constants(
    kit: RateKit,
    ell: int = 1,
    grid_horizon: float = 1e4,
    kappa_list: Sequence[float] = (),
) -> SubgeomConstants:
    """Certify ``c1..c5``, ``sup r(p+1)/r(p)`` and ``M_kappa`` on a grid.

    Every supremum is taken over a finite grid up to ``grid_horizon`` and
    accepted only if the maximised profile is nonincreasing over the last
    quarter of the grid; otherwise :class:`CertificationError` is raised.

    The reference rate is ``r0 = max(1, 2/r(0)) * r``, which is ``>= 2`` and
    inherits the growth of ``r``; the class conditions on ``r0``
    (nondecreasing, ``log r0(x)/x`` nonincreasing) are checked on the grid.
    """
    K = int(grid_horizon)
    if K < 1000:
        raise ValueError("grid_horizon must allow at least 1e3 evaluations")
    ks = np.arange(0, K + 1, dtype=float)
    log_r = np.asarray(kit.log_r(ks))
    log_R = np.asarray(kit.log_Hinv(ks))
    notes = []

    # c1 = sup_k R(k) / sum_{i<k} r(i)
    log_S = np.logaddexp.accumulate(log_r)[:-1]
    c1_profile = np.exp(log_R[1:] - log_S)
    if not _tail_nonincreasing(c1_profile):
        raise CertificationError("c1: R(k)/sum r(i) still increasing at the horizon")
    i1 = int(np.argmax(c1_profile))
    c1 = float(c1_profile[i1])
    notes.append(f"c1 attained at k={i1 + 1}, profile nonincreasing over k>{int(0.75 * K)}")

    # c2 and c5 over a pair grid
    grid = _pair_grid(K)
    tt, uu = np.meshgrid(grid, grid, indexing="ij")
    sums = np.unique((tt + uu).ravel())
    log_R_sum = dict(zip(sums, np.asarray(kit.log_Hinv(sums))))
    log_r_sum = dict(zip(sums, np.asarray(kit.log_r(sums))))
    idx = np.searchsorted(ks, grid).astype(int)
    lR, lr = log_R[idx], log_r[idx]
    flat = (tt + uu).ravel()
    lR_tu = np.array([log_R_sum[s] for s in flat]).reshape(tt.shape)
    lr_tu = np.array([log_r_sum[s] for s in flat]).reshape(tt.shape)
    ratio2 = lR_tu - lR[:, None] - lR[None, :]
    ratio5 = lr_tu - lr[:, None] - lr[None, :]
    for name, ratio in (("c2", ratio2), ("c5", ratio5)):
        prof = np.exp(np.max(np.maximum(ratio, ratio.T), axis=1))
        if not _tail_nonincreasing(prof):
            raise CertificationError(f"{name}: pair ratio still increasing at the horizon")
    c2 = float(max(1.0, np.exp(ratio2.max())))
    c5 = float(max(1.0, np.exp(ratio5.max())))
    notes.append(f"c2, c5 maximised over {grid.size}^2 grid pairs up to {K}")

    # reference rate r0 and c3, c4
    r0_factor = max(1.0, 2.0 / math.exp(log_r[0]))
    log_r0 = log_r + math.log(r0_factor)
    if np.any(np.diff(log_r0) < -1e-12):
        raise CertificationError("r0 is not nondecreasing on the grid")
    growth = log_r0[1:] / ks[1:]
    if np.any(np.diff(growth) > 1e-12 * np.abs(growth[:-1])):
        bad = int(np.flatnonzero(np.diff(growth) > 1e-12 * np.abs(growth[:-1]))[0]) + 1
        raise CertificationError(f"log r0(x)/x increases near x={bad}")
    c3 = 1.0
    c4 = r0_factor
    r0_spec = f"r0(t) = {r0_factor:.17g} * r(t)"

    # sup_p r(p+1)/r(p)
    step = np.exp(np.diff(log_r))
    if not _tail_nonincreasing(step):
        raise CertificationError("r(p+1)/r(p) still increasing at the horizon")
    r_step_ratio = float(step.max())
    notes.append(f"r(p+1)/r(p) maximised at p={int(np.argmax(step))}")

    kappa_values = {}
    for kappa in kappa_list:
        m_k, _ = mkappa(kit, kappa)
        beyond = ks >= m_k
        if np.any(log_r[beyond] > math.log(kappa) + log_R[beyond] + 1e-12):
            raise CertificationError(f"r > kappa R past M_kappa for kappa={kappa}")
        kappa_values[float(kappa)] = m_k

    return SubgeomConstants(
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        c5=c5,
        r0_spec=r0_spec,
        grid_horizon=float(K),
        r_step_ratio=r_step_ratio,
        kappa_values=kappa_values,
        tail_justification="; ".join(notes),
        kit=kit,
    )
