import math

import numpy as np
import pytest

from subgeo.bounds import (
    BoundInputs,
    assemble_constants,
    bound_report,
    eval_bound_i,
    eval_bound_ii,
    n_min_valid,
    tail_bound,
    validate_bound,
)
from subgeo.experiments import DEMO_INPUTS
from subgeo.rates import Extended, Logarithmic, PcnDrift, Polynomial, Subexponential, build_rate_kit, subgeom_constants

ALL_FAMILIES = [Polynomial(0.5), Subexponential(1.0), Logarithmic(1.0), PcnDrift(0.5, 2.0, 0.5),
                Extended(Subexponential(2.0), math.e**2)]


def _setup(phi, **over):
    kit = build_rate_kit(phi)
    cfg = {**DEMO_INPUTS, **over}
    consts = subgeom_constants(kit, cfg["ell"], 1e4)
    inputs = BoundInputs(kit, **cfg)
    return kit, consts, inputs


def test_constants_recomputed_by_hand():
    kit, consts, inputs = _setup(Polynomial(0.5), ell=3)
    bc = assemble_constants(inputs, consts)
    r0 = 1.0  # r(0) = phi(Hinv(0)) = phi(1)
    b_seq = consts.r_step_ratio * 1.0 / r0
    R2 = (1 + 2.0 / 2) ** 2  # R(ell - 1) = (1 + t/2)^2 at t = 2
    a1 = consts.c1 * consts.c2 * R2
    C = a1 * (4.0 + 3 * 1.0 + b_seq * r0)
    assert bc.b_seq == pytest.approx(b_seq, rel=1e-14)
    assert bc.a1 == pytest.approx(a1, rel=1e-12)
    assert bc.a2 == pytest.approx(a1 * b_seq, rel=1e-12)
    assert bc.C_Delta == pytest.approx(C, rel=1e-12)
    assert bc.a3 == pytest.approx(consts.c3 * consts.c4 * C, rel=1e-12)
    assert bc.b1 == pytest.approx(consts.c5 * C, rel=1e-12)


def test_constants_edge_cases():
    kit, consts, inputs = _setup(Polynomial(0.5))
    bc = assemble_constants(inputs, consts)
    assert bc.a1 == pytest.approx(consts.c1 * consts.c2, rel=1e-14)
    assert assemble_constants(inputs, consts, b_seq=0.0).a2 == 0.0


def test_input_validation():
    kit = build_rate_kit(Polynomial(0.5))
    with pytest.raises(ValueError):
        BoundInputs(kit, **{**DEMO_INPUTS, "epsilon": 1.0})
    with pytest.raises(ValueError):
        BoundInputs(kit, **{**DEMO_INPUTS, "ell": 0})
    with pytest.raises(ValueError):
        BoundInputs(kit, **{**DEMO_INPUTS, "sup_delta_V": 10.0}, upsilon=2.0)


@pytest.mark.parametrize("phi", ALL_FAMILIES, ids=repr)
def test_bound_i_decays_and_is_capped(phi):
    kit, consts, inputs = _setup(phi)
    bc = assemble_constants(inputs, consts)
    out = eval_bound_i(bc, inputs, kit, np.array([1.0, 1e3, 1e6]))
    assert np.all(out["total"] <= 1.0)
    # logarithmic rates only lose a factor log(1e6)/log(1e3) = 2 over this range
    cap = 0.7 if isinstance(phi, Logarithmic) else 0.1
    assert math.exp(out["log_total_raw"][2] - out["log_total_raw"][1]) < cap
    with pytest.raises(ValueError):
        eval_bound_i(bc, inputs, kit, 0.0)


def test_term3_decreases_in_epsilon():
    vals = []
    for eps in (0.1, 0.5, 0.9, 0.99):
        kit, consts, inputs = _setup(Polynomial(0.5), epsilon=eps)
        bc = assemble_constants(inputs, consts)
        vals.append(eval_bound_i(bc, inputs, kit, 1e4)["term3"] / bc.a3)
    assert np.all(np.diff(vals) < 0)


def test_polynomial_order():
    kit, consts, inputs = _setup(Polynomial(0.5))
    bc = assemble_constants(inputs, consts)
    n = np.geomspace(1e3, 1e6, 30)
    scaled = np.exp(eval_bound_i(bc, inputs, kit, n)["log_total_raw"]) * n
    assert scaled.max() / scaled.min() < 5


def test_subexponential_order():
    kit, consts, inputs = _setup(Subexponential(1.0))
    bc = assemble_constants(inputs, consts)
    n = np.geomspace(1e2, 1e5, 30)
    delta = 0.9
    out = eval_bound_ii(bc, inputs, kit, n, delta)
    centred = out["log_total_raw"] + delta * np.sqrt(2 * n)
    assert np.ptp(centred) < 0.1 * np.ptp(delta * np.sqrt(2 * n))


def test_bound_ii_degrades_as_delta_shrinks():
    kit, consts, inputs = _setup(Subexponential(1.0))
    bc = assemble_constants(inputs, consts)
    # the constant grows as delta -> 1, so compare the decay over a decade instead
    n = np.array([1e4, 1e5])
    drops = [-np.diff(eval_bound_ii(bc, inputs, kit, n, d)["log_total_raw"])[0] for d in (0.9, 0.5, 0.2)]
    assert drops[0] > drops[1] > drops[2] > 0
    with pytest.raises(ValueError):
        eval_bound_ii(bc, inputs, kit, 1e4, 1.0)


def test_zero_epsilon_gives_trivial_bound_ii():
    kit, consts, inputs = _setup(Polynomial(0.5), epsilon=0.0)
    bc = assemble_constants(inputs, consts)
    assert np.all(eval_bound_ii(bc, inputs, kit, np.array([10.0, 1e5]), 0.5)["total"] == 1.0)


def test_n_min_valid_definition():
    kit, consts, inputs = _setup(Polynomial(0.5), M_V=9.0)
    n0 = n_min_valid(inputs)
    assert kit.R(n0 / 2) >= 9.0 - 1e-9
    assert kit.R((n0 - 1) / 2) < 9.0
    assert n_min_valid(BoundInputs(kit, **{**DEMO_INPUTS, "M_V": 1.0})) == 1


def test_report_csv_and_soundness(tmp_path):
    kit, consts, inputs = _setup(Polynomial(0.5))
    rep = bound_report(inputs, consts, np.arange(1, 50))
    rec = validate_bound(rep, np.zeros(49))
    assert rec.sound and rec.first_violation is None
    rep.to_csv(tmp_path / "b.csv")
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header == "n,term1,term2,term3,total_i,total_ii,truth,ratio"
    bad = validate_bound(rep, np.full(49, 2.0))
    assert not bad.sound and bad.first_violation == rep.n_min_valid


def test_tail_bound_at_zero_is_at_least_one():
    kit, consts, inputs = _setup(Polynomial(0.5))
    bc = assemble_constants(inputs, consts)
    for m in range(4):
        assert tail_bound(bc, kit, 2.0, m, np.array([0.0]))[0] >= 1.0
