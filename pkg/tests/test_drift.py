import dataclasses
import math

import numpy as np
import pytest

from subgeo._streams import Streams
from subgeo.chains import ARSpec, LatticeSpec, PcnSpec, TruncatedExpNoise, log_lyapunov_eval
from subgeo.coupling import kernel_for
from subgeo.drift import (
    ExactRow,
    GeometricRate,
    MonteCarlo,
    calibrate_drift,
    check_double_drift,
    check_sequence_drift,
    check_single_drift,
    estimate_PV,
    sequence_b,
    single_to_double,
)
from subgeo.rates import PcnDrift, Polynomial, build_rate_kit, subgeom_constants


@pytest.fixture(scope="module")
def lattice():
    return LatticeSpec(0.4, 200, s_exponent=2.2)


@pytest.fixture(scope="module")
def calibrated(lattice):
    V = lattice.default_lyapunov()
    phi_unit = Polynomial(0.2 / 2.2)
    inner = lattice.states[(lattice.states >= 0) & (lattice.states < lattice.xmax)]
    c, b = calibrate_drift(lattice, phi_unit, V, inner, ExactRow())
    return V, phi_unit.scaled(c), c, b


def test_exact_PV_is_row_sum(lattice):
    V = lattice.default_lyapunov()
    est = estimate_PV(lattice, V, [0.0, 1.0], ExactRow())
    P = lattice.transition_matrix().toarray()
    Vs = V(lattice.states)
    assert est.exact
    assert est.mean[1] == pytest.approx(P[lattice.index(1.0)] @ Vs, rel=1e-14)
    assert np.all(est.se == 0)


def test_exact_row_needs_lattice():
    with pytest.raises(TypeError):
        estimate_PV(ARSpec(2, 1.0), None, np.zeros((1, 2)), ExactRow())


def test_monte_carlo_needs_generator():
    with pytest.raises(ValueError):
        estimate_PV(ARSpec(2, 1.0), None, np.zeros((1, 2)), MonteCarlo(100))


def test_lattice_calibration_valid(lattice, calibrated):
    V, phi, c, b = calibrated
    assert c > 0 and math.isfinite(b)
    cert = check_single_drift(lattice, phi, V, b, lattice.states, ExactRow())
    assert cert.valid
    assert cert.counts()["holds"] == lattice.n_states
    # a larger b is still valid
    assert check_single_drift(lattice, phi, V, b + 1.0, lattice.states, ExactRow()).valid


def test_single_point_feasibility(lattice):
    V = lattice.default_lyapunov()
    phi = Polynomial(0.5)
    est = estimate_PV(lattice, V, [0.0], ExactRow())
    need = est.mean[0] - 1.0 + 1.0
    assert check_single_drift(lattice, phi, V, need + 1e-9, [0.0], ExactRow()).valid
    assert not check_single_drift(lattice, phi, V, need - 1e-3, [0.0], ExactRow()).valid


def test_certificate_json(tmp_path, lattice, calibrated):
    V, phi, _, b = calibrated
    cert = check_single_drift(lattice, phi, V, b, lattice.states[:5], ExactRow(), seed=3)
    path = tmp_path / "cert.json"
    cert.to_json(path)
    text = path.read_text()
    assert '"valid": true' in text and '"seed": 3' in text


def test_single_to_double_formula(lattice, calibrated):
    V, phi, _, b = calibrated
    cert = check_single_drift(lattice, phi, V, b, lattice.states, ExactRow())
    plug = dataclasses.replace(cert, phi=Polynomial(0.5), b=1.0)
    params = single_to_double(plug, 16.0)
    assert params.c == pytest.approx(0.5, abs=1e-15)
    assert params.b_double == 2.0
    assert single_to_double(plug, 1e12).c > 0.999
    with pytest.raises(ValueError):
        single_to_double(plug, 4.0)
    bad = dataclasses.replace(cert, status=np.array(["violated"] * cert.status.size))
    with pytest.raises(ValueError):
        single_to_double(bad, 16.0)


def test_double_drift_on_lattice(lattice, calibrated):
    V, phi, _, b = calibrated
    cert = check_single_drift(lattice, phi, V, b, lattice.states, ExactRow())
    ups = phi.inverse(4.0 * b)
    params = single_to_double(cert, ups)
    sub = lattice.states[::10]
    pairs = [(x, y) for x in sub for y in sub]
    rep = check_double_drift(lattice, params, phi, V, pairs, ExactRow())
    assert rep.valid
    assert rep.sup_delta_V <= 2 * ups


def test_sequence_drift_on_lattice(lattice, calibrated):
    V, phi, _, b = calibrated
    cert = check_single_drift(lattice, phi, V, b, lattice.states, ExactRow())
    params = single_to_double(cert, phi.inverse(4.0 * b))
    kit = build_rate_kit(params.phi_double)
    consts = subgeom_constants(kit, 1, 1e4)
    bs = sequence_b(consts, params.b_double)
    assert bs >= params.b_double / float(kit.r(0.0))
    sub = lattice.states[::25]
    pairs = [(x, y) for x in sub for y in sub]
    rep = check_sequence_drift(lattice, kit, V, params.delta, 1, bs, pairs, 20)
    assert rep.valid


def test_geometric_mode_is_flagged():
    g = GeometricRate(0.3)
    assert g.as_dict()["in_subgeometric_class"] is False


def test_ar_estimator_unbiased():
    spec = ARSpec(2, 1.5, TruncatedExpNoise(1.0, 1.0))
    V = spec.default_lyapunov()
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [400.0, 0.0]])
    est = estimate_PV(spec, V, pts, MonteCarlo(100000), Streams(1))
    rng = np.random.default_rng(2)
    for i, x in enumerate(pts):
        y = spec.step(np.repeat(x[None], 400000, axis=0), rng)
        v = np.exp(log_lyapunov_eval(spec, y, V))
        plain_se = v.std() / math.sqrt(v.size)
        assert abs(est.mean[i] - v.mean()) <= 4 * math.hypot(plain_se, est.se[i])


def test_pcn_drift_monte_carlo():
    spec = PcnSpec(10, 0.5, tuple(1.0 / (1 + np.arange(10)) ** 2))
    V = spec.default_lyapunov()
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(12, 10)) * np.linspace(0, 30, 12)[:, None] / math.sqrt(10)
    phi_unit = PcnDrift(1.0, spec.drift_kappa, spec.beta)
    c, b = calibrate_drift(spec, phi_unit, V, pts, MonteCarlo(4000, 0.9995), Streams(3),
                           np.geomspace(1e-4, 0.99, 61))
    cert = check_single_drift(spec, phi_unit.scaled(c), V, b, pts, MonteCarlo(4000, 0.975), Streams(4))
    assert cert.valid


def test_b_headroom_adds_standard_errors():
    spec = PcnSpec(4, 0.5, (1.0, 0.5, 0.25, 0.125))
    V = spec.default_lyapunov()
    pts = np.zeros((3, 4))
    pts[1, 0], pts[2, 0] = 1.0, 5.0
    phi_unit = PcnDrift(1.0, spec.drift_kappa, spec.beta)
    grid = np.geomspace(1e-3, 0.9, 20)
    method = MonteCarlo(2000, 0.99)
    c0, b0 = calibrate_drift(spec, phi_unit, V, pts, method, Streams(5), grid)
    c1, b1 = calibrate_drift(spec, phi_unit, V, pts, method, Streams(5), grid, b_headroom=3.0)
    se = estimate_PV(spec, V, pts, method, Streams(5)).se
    assert c1 == c0
    assert b0 < b1 <= b0 + 3.0 * se.max() + 1e-15
