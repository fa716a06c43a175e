import numpy as np
import pytest

from subgeo.chains import LatticeDist, LatticeSpec
from subgeo.coupling import Eta, ProductBall, Trivial, kernel_for, simulate_coupled
from subgeo.metrics import DistanceEstimate, comonotone_w1d, tv_curve, tv_exact, wasserstein_upper, write_distance_curve


def test_tv_exact_values():
    p = np.array([0.2, 0.3, 0.5])
    assert tv_exact(p, p).value == 0.0
    assert tv_exact([1.0, 0.0], [0.0, 1.0]).value == 1.0
    assert tv_exact([0.5, 0.5, 0.0], [0.0, 0.5, 0.5]).value == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        tv_exact([1.0], [0.5, 0.5])


def test_tv_curve_starts_high_and_decreases():
    spec = LatticeSpec(0.4, 40)
    curve = tv_curve(spec, LatticeDist.point_mass(spec, 3.0), 200)
    assert curve[0] > 0.9
    assert np.all(np.diff(curve) <= 1e-12)
    assert tv_curve(spec, spec.stationary(), 5).max() < 1e-9


def test_wasserstein_upper_at_start():
    spec = LatticeSpec(0.4, 40)
    rng = np.random.default_rng(0)
    traces = [simulate_coupled(kernel_for(spec), (0.0, 3.0), 10, ProductBall(0.5), 1, Trivial(), rng)
              for _ in range(20)]
    est = wasserstein_upper(traces, 0)
    assert est.value == 1.0 and est.stderr == 0.0
    arr = np.array([[1.0, 0.5], [1.0, 0.0]])
    assert wasserstein_upper(arr, 1).value == 0.25
    with pytest.raises(ValueError):
        wasserstein_upper([], 0)


def test_comonotone_shift():
    rng = np.random.default_rng(1)
    xs = rng.normal(size=500)
    shift = 0.36
    est = comonotone_w1d(xs, rng.permutation(xs) + shift, Eta(2.0, 0.5))
    assert est.value == pytest.approx(shift**0.5 / 2.0, rel=1e-12)
    with pytest.raises(ValueError):
        comonotone_w1d(xs, xs[:-1], Trivial())


def test_distance_estimate_validation(tmp_path):
    with pytest.raises(ValueError):
        DistanceEstimate(1.5, "ExactTV")
    with pytest.raises(ValueError):
        DistanceEstimate(0.5, "Other")
    with pytest.raises(ValueError):
        DistanceEstimate(0.5, "ExactTV", 0.1)
    path = tmp_path / "d.csv"
    write_distance_curve(path, [0, 1], [DistanceEstimate(1.0, "ExactTV"), DistanceEstimate(0.5, "CouplingUpper", 0.1)])
    assert path.read_text().splitlines()[0] == "n,value,stderr,kind"
