"""Explicit convergence bounds assembled from drift, coupling-set and rate constants.

All terms are computed in log space so that the uncapped total remains
available where ``R`` overflows; reported totals are capped at 1 because the
metrics are bounded by 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._io import write_csv, write_json
from .coupling import ExactProductResult
from .rates import RateKit, SubgeomConstants, mkappa

__all__ = [
    "BoundInputs",
    "BoundConstants",
    "BoundReport",
    "SoundnessRecord",
    "assemble_constants",
    "eval_bound_i",
    "eval_bound_ii",
    "bound_report",
    "n_min_valid",
    "validate_bound",
    "tail_bound",
    "tail_bound_check",
]


@dataclass(frozen=True)
class BoundInputs:
    """Certified ingredients of the bound.

    Parameters
    ----------
    kit : RateKit
        Rate kit of the double-drift rate ``c phi``.
    ell, epsilon : int, float
        Coupling-set parameters; ``epsilon`` is the certified lower value
        and may be 0, in which case only the non-contracting terms remain.
    b_double : float
        Constant of the pairwise drift.
    sup_delta_V : float
        ``sup`` of ``V(x) + V(y)`` over the coupling set.
    M_phi : float
        Upper estimate of ``pi(phi o V)``.
    M_V : float
        Level with ``pi(V <= M_V) >= 1/2``.
    V_of_x : float
        ``V`` at the starting point.
    """

    kit: RateKit
    ell: int
    epsilon: float
    b_double: float
    sup_delta_V: float
    M_phi: float
    M_V: float
    V_of_x: float
    upsilon: Optional[float] = None

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be at least 1")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.upsilon is not None and self.sup_delta_V > 2 * self.upsilon * (1 + 1e-12):
            raise ValueError("sup_delta_V exceeds 2 upsilon")
        if self.M_phi < float(self.kit.phi.eval(1.0)) * (1 - 1e-12):
            raise ValueError("M_phi must be at least phi(1)")

    def as_dict(self):
        d = {k: getattr(self, k) for k in
             ("ell", "epsilon", "b_double", "sup_delta_V", "M_phi", "M_V", "V_of_x", "upsilon")}
        d["phi"] = self.kit.phi.as_dict()
        return d


@dataclass(frozen=True)
class BoundConstants:
    a1: float
    a2: float
    a3: float
    b1: float
    C_Delta: float
    b_seq: float
    consts: SubgeomConstants = field(repr=False, compare=False, default=None)

    def as_dict(self):
        d = {k: getattr(self, k) for k in ("a1", "a2", "a3", "b1", "C_Delta", "b_seq")}
        d["notes"] = "the pairwise tail-bound constant b2 is taken equal to a2"
        return d


def assemble_constants(
    inputs: BoundInputs, consts: SubgeomConstants, b_seq: Optional[float] = None
) -> BoundConstants:
    """``a1, a2, a3, b1`` and the coupling-set constant ``C_Delta``.

    ``b_seq`` defaults to ``sup_p r(p+1)/r(p) * b_double / r(0)``.
    """
    kit = inputs.kit
    r0 = float(kit.r(0.0))
    if b_seq is None:
        b_seq = consts.r_step_ratio * inputs.b_double / r0
    a1 = consts.c1 * consts.c2 * float(kit.R(inputs.ell - 1.0))
    a2 = a1 * b_seq * r0
    C_Delta = a1 * (inputs.sup_delta_V + inputs.ell * inputs.b_double + b_seq * r0)
    a3 = consts.c3 * consts.c4 * C_Delta
    b1 = consts.c5 * C_Delta
    vals = (a1, a2, a3, b1, C_Delta)
    if not all(math.isfinite(v) and v >= 0 for v in vals):
        raise ValueError(f"non-finite or negative constant in {vals}")
    return BoundConstants(a1, a2, a3, b1, C_Delta, b_seq, consts)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def n_min_valid(inputs: BoundInputs) -> int:
    """First ``n`` with ``R(n/2) >= M_V``."""
    if inputs.M_V <= 1.0:
        return 1
    return max(1, int(math.ceil(2.0 * float(inputs.kit.H(inputs.M_V)) - 1e-12)))


def _log_vn(kit: RateKit, n, epsilon: float):
    n = np.asarray(n, dtype=float)
    if epsilon == 0:
        return np.zeros_like(n)
    l1e = math.log1p(-epsilon)
    arg = -n * l1e / (2.0 * (np.asarray(kit.log_Hinv(n)) - l1e))
    return np.asarray(kit.log_Hinv(arg))


def eval_bound_i(consts: BoundConstants, inputs: BoundInputs, kit: RateKit, n) -> dict:
    """Terms of bound (i); arrays when ``n`` is an array.

    ``term1 = (a1 (V(x) + b (ell-1)) + a2 + 1) / Hinv(n/2)``,
    ``term2 = 2 M_phi (a1 + 1) / phi(R(n/2))``, ``term3 = a3 / v_n``.
    """
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("bound (i) needs n >= 1")
    half = n / 2.0
    log_R_half = np.asarray(kit.log_Hinv(half))
    lt1 = _log(consts.a1 * (inputs.V_of_x + inputs.b_double * (inputs.ell - 1)) + consts.a2 + 1.0) - log_R_half
    lt2 = _log(2.0 * inputs.M_phi * (consts.a1 + 1.0)) - np.asarray(kit.log_r(half))
    log_vn = _log_vn(kit, n, inputs.epsilon)
    lt3 = _log(consts.a3) - log_vn
    log_raw = np.logaddexp(np.logaddexp(lt1, lt2), lt3)
    return {
        "n": n,
        "term1": np.exp(lt1),
        "term2": np.exp(lt2),
        "term3": np.exp(lt3),
        "log_total_raw": log_raw,
        "total": np.exp(np.minimum(log_raw, 0.0)),
        "v_n": np.exp(log_vn),
        "applicable": n >= n_min_valid(inputs),
    }


def eval_bound_ii(consts: BoundConstants, inputs: BoundInputs, kit: RateKit, n, delta: float) -> dict:
    """Bound (ii) at fixed ``delta``.

    ``kappa = ((1 - eps)^(-(1-delta)/delta) - 1) / b1`` and
    ``total = (1 + (1 + b1 kappa)(r(M_kappa)/kappa + a1 (V(x) + b (ell-1)) + a2)) / R(n)^delta
    + 2 M_phi ((1 + b1 kappa) a1 + 1) / phi(R(n)^delta)``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n = np.asarray(n, dtype=float)
    if inputs.epsilon == 0:
        ones = np.ones_like(n)
        return {"n": n, "kappa": 0.0, "M_kappa": math.inf, "log_total_raw": 0.0 * ones,
                "total": ones, "applicable": np.zeros(n.shape, dtype=bool)}
    kappa = math.expm1(-(1.0 - delta) / delta * math.log1p(-inputs.epsilon)) / consts.b1
    M_k, log_r_Mk = mkappa(kit, kappa)
    grow = 1.0 + consts.b1 * kappa
    num1 = 1.0 + grow * (math.exp(log_r_Mk) / kappa
                         + consts.a1 * (inputs.V_of_x + inputs.b_double * (inputs.ell - 1)) + consts.a2)
    log_Rd = delta * np.asarray(kit.log_Hinv(n))
    lt1 = _log(num1) - log_Rd
    lt2 = _log(2.0 * inputs.M_phi * (grow * consts.a1 + 1.0)) - np.asarray(kit.phi.log_eval(log_Rd))
    log_raw = np.logaddexp(lt1, lt2)
    return {
        "n": n,
        "kappa": kappa,
        "M_kappa": M_k,
        "term1": np.exp(lt1),
        "term2": np.exp(lt2),
        "log_total_raw": log_raw,
        "total": np.exp(np.minimum(log_raw, 0.0)),
        "applicable": n >= n_min_valid(inputs),
    }


# ---------------------------------------------------------------------------
# reports and validation


@dataclass
class BoundReport:
    inputs: BoundInputs
    constants: BoundConstants
    bound_i: dict
    bound_ii: dict
    delta: float
    n_min_valid: int
    truth: Optional[np.ndarray] = None

    @property
    def n(self) -> np.ndarray:
        return self.bound_i["n"]

    def to_csv(self, path) -> None:
        n = self.n
        truth = self.truth if self.truth is not None else np.full(n.shape, np.nan)
        total = self.bound_i["total"]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(total > 0, truth / total, np.nan)
        write_csv(
            path,
            ["n", "term1", "term2", "term3", "total_i", "total_ii", "truth", "ratio"],
            [n.astype(int), self.bound_i["term1"], self.bound_i["term2"], self.bound_i["term3"],
             total, self.bound_ii["total"], truth, ratio],
        )

    def as_dict(self) -> dict:
        return {
            "inputs": self.inputs.as_dict(),
            "constants": self.constants.as_dict(),
            "subgeometric_constants": self.constants.consts.as_dict() if self.constants.consts else None,
            "delta": self.delta,
            "n_min_valid": self.n_min_valid,
            "kappa_ii": self.bound_ii.get("kappa"),
        }

    def to_json(self, path) -> None:
        write_json(path, self.as_dict())


def bound_report(
    inputs: BoundInputs, consts: SubgeomConstants, ns, delta: float = 0.5,
    b_seq: Optional[float] = None,
) -> BoundReport:
    bc = assemble_constants(inputs, consts, b_seq)
    ns = np.asarray(ns, dtype=float)
    return BoundReport(
        inputs, bc, eval_bound_i(bc, inputs, inputs.kit, ns),
        eval_bound_ii(bc, inputs, inputs.kit, ns, delta), delta, n_min_valid(inputs),
    )


@dataclass(frozen=True)
class SoundnessRecord:
    sound: bool
    first_violation: Optional[int]
    n_checked: int
    max_tightness: float
    tightness: np.ndarray = field(repr=False)

    def as_dict(self):
        return {"sound": self.sound, "first_violation": self.first_violation,
                "n_checked": self.n_checked, "max_tightness": self.max_tightness}


def validate_bound(report: BoundReport, truth, slack=0.0) -> SoundnessRecord:
    """Check ``total_i(n) >= truth(n) - slack`` for every ``n >= n_min_valid``.

    ``truth`` is aligned with ``report.n``; ``slack`` may be an array (e.g.
    three standard errors for Monte Carlo truths).
    """
    truth = np.asarray(truth, dtype=float)
    report.truth = truth
    use = report.n >= report.n_min_valid
    total = report.bound_i["total"]
    ok = total[use] >= truth[use] - np.broadcast_to(slack, truth.shape)[use]
    with np.errstate(divide="ignore", invalid="ignore"):
        tight = np.where(total > 0, truth / total, 0.0)
    first = None if ok.all() else int(report.n[use][np.argmin(ok)])
    return SoundnessRecord(bool(ok.all()), first, int(use.sum()),
                           float(tight[use].max()) if use.any() else 0.0, tight)


def tail_bound(consts: BoundConstants, kit: RateKit, QV0: float, m: int, n) -> np.ndarray:
    """``(a1 Q^(ell-1) V_0 + a2) / R(n/2) + a3 / R(n/(2m))``; the last term is absent for ``m = 0``."""
    n = np.asarray(n, dtype=float)
    lt = _log(consts.a1 * QV0 + consts.a2) - np.asarray(kit.log_Hinv(n / 2.0))
    if m > 0:
        lt = np.logaddexp(lt, _log(consts.a3) - np.asarray(kit.log_Hinv(n / (2.0 * m))))
    return np.exp(lt)


def tail_bound_check(
    exact: ExactProductResult,
    consts: BoundConstants,
    inputs: BoundInputs,
    V_pair_sum: float,
    m_list: Sequence[int],
    n_list: Sequence[int],
) -> dict:
    """Compare exact ``P[T_m >= n]`` with the tail bound.

    ``Q^(ell-1) V_0(x, y)`` is bounded by ``V(x) + V(y) + (ell - 1) b_double``.
    """
    kit = inputs.kit
    QV0 = V_pair_sum + (inputs.ell - 1) * inputs.b_double
    n_arr = np.asarray(n_list, dtype=int)
    violations = []
    worst = 0.0
    for m in m_list:
        exact_tail = exact.tail[m, n_arr]
        bound = tail_bound(consts, kit, QV0, m, n_arr)
        bad = exact_tail > bound
        worst = max(worst, float(np.max(exact_tail / bound)))
        violations.extend((int(m), int(n)) for n in n_arr[bad])
    return {"violations": violations, "n_violations": len(violations),
            "max_exact_over_bound": worst, "QV0_bound": QV0}
