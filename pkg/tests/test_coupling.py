import math

import numpy as np
import pytest
from scipy import stats

from subgeo._streams import Streams
from subgeo.chains import ARSpec, LatticeSpec, PcnSpec, TruncatedExpNoise, pcn_step
from subgeo.coupling import (
    Eta,
    LevelSet,
    ProductBall,
    ProductLevelSet,
    Trivial,
    couple_ar,
    couple_pcn,
    couple_srwm,
    exact_epsilon,
    kernel_for,
    product_chain_exact,
    product_transition_matrix,
    simulate_coupled,
    simulate_distances,
    verify_coupling_set,
)
from subgeo.chains import PowerLyapunov


@pytest.fixture
def small():
    return LatticeSpec(0.4, 12)


def test_sets_and_metrics():
    assert ProductBall(0.5).contains(np.array([0.25, 0.75]), np.array([0.5, 0.0])).tolist() == [True, False]
    V = PowerLyapunov(2.2)
    assert LevelSet(V, 3.0).contains(0.0, 1.0) and not LevelSet(V, 1.5).contains(0.0, 1.25)
    assert ProductLevelSet(V, 2.0).contains(1.0, -1.0) and not ProductLevelSet(V, 2.0).contains(2.0, 0.0)
    assert Trivial()(np.array([1.0, 2.0]), np.array([1.0, 3.0])).tolist() == [0.0, 1.0]
    assert Eta(4.0, 0.5)(np.zeros((1, 2)), np.array([[4.0, 0.0]]))[0] == pytest.approx(0.5)
    assert Eta(0.1)(0.0, 5.0) == 1.0
    with pytest.raises(ValueError):
        Eta(1.0, 1.5)


def test_srwm_coupling_diagonal_and_marginal(small):
    rng = np.random.default_rng(0)
    x = np.full(100000, 0.5)
    xn, yn = couple_srwm(small, x, x, rng)
    assert np.array_equal(xn, yn)
    xn, _ = couple_srwm(small, x, np.full(100000, -1.0), rng)
    row = small.transition_matrix().getrow(int(small.index(0.5))).toarray().ravel()
    i = int(small.index(0.5))
    counts = np.array([(xn == v).sum() for v in (0.25, 0.5, 0.75)])
    assert stats.chisquare(counts, row[i - 1 : i + 2] * x.size).pvalue > 1e-3


def test_ar_coupling_properties():
    spec = ARSpec(2, 1.0, TruncatedExpNoise(1.0, 1.0))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5000, 2)) * 3
    y = rng.normal(size=(5000, 2)) * 3
    xn, yn = couple_ar(spec, x, x, rng)
    assert np.array_equal(xn, yn)
    xn, yn = couple_ar(spec, x, y, rng)
    assert np.all(np.linalg.norm(xn - yn, axis=1) <= np.linalg.norm(x - y, axis=1) * (1 + 1e-12))


def test_pcn_coupling_marginal_and_contraction():
    spec = PcnSpec(4, 0.5, (1.0, 0.5, 0.25, 0.125))
    rng = np.random.default_rng(2)
    x = np.tile([1.0, 0.0, -1.0, 0.5], (100000, 1))
    y = np.zeros_like(x)
    xn, yn = couple_pcn(spec, x, y, rng)
    single = spec.step(x, np.random.default_rng(99))
    assert stats.ks_2samp(np.linalg.norm(xn, axis=1), np.linalg.norm(single, axis=1)).pvalue > 1e-3
    moved = np.any(xn != x, axis=1) & np.any(yn != y, axis=1)
    gap0 = np.linalg.norm(x - y, axis=1)[moved]
    assert np.allclose(np.linalg.norm(xn - yn, axis=1)[moved], 0.5 * gap0, rtol=1e-12)


def test_kernel_for_rejects_unknown():
    with pytest.raises(TypeError):
        kernel_for(object())


def test_simulate_coupled_renewals(small):
    rng = np.random.default_rng(3)
    tr = simulate_coupled(kernel_for(small), (0.0, 2.0), 60, ProductBall(1.0), 2, Trivial(), rng)
    assert tr.dists[0] == 1.0
    hits = tr.hitting_times
    assert all(h >= 2 for h in hits[:1])
    assert all(b - a >= 2 for a, b in zip(hits, hits[1:]))
    if tr.coalesced_at is not None:
        assert np.all(tr.dists[tr.coalesced_at :] == 0)
    diag = simulate_coupled(kernel_for(small), (0.5, 0.5), 10, ProductBall(1.0), 1, Trivial(), rng)
    assert np.all(diag.dists == 0) and diag.coalesced_at == 0


def test_trace_csv(tmp_path, small):
    tr = simulate_coupled(kernel_for(small), (0.0, 1.0), 20, ProductBall(1.0), 1, Trivial(),
                          np.random.default_rng(4))
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,x,y,d,renewal_index"
    assert len(lines) == len(tr.pairs) + 1


def test_product_matrix_absorbing(small):
    Q = product_transition_matrix(small)
    N = small.n_states
    d = np.arange(N) * (N + 1)
    assert np.allclose(np.asarray(Q.sum(axis=1)).ravel(), 1.0)
    # the diagonal is closed: diagonal rows put all their mass on diagonal columns
    assert np.allclose(np.asarray(Q[d][:, d].sum(axis=1)).ravel(), 1.0)


def test_exact_product_chain_matches_simulation(small):
    ex = product_chain_exact(small, (0.0, 1.0), 40, ProductBall(0.5), 2, m_max=3)
    assert ex.dist_expectation[0] == 1.0
    assert np.all(np.diff(ex.dist_expectation) <= 0)
    D = simulate_distances(kernel_for(small), (0.0, 1.0), 40, 10000, Trivial(), np.random.default_rng(5))
    se = D.std(axis=0, ddof=1) / math.sqrt(D.shape[0])
    assert np.all(np.abs(D.mean(axis=0) - ex.dist_expectation) <= 3 * se + 1e-12)
    assert np.all(np.diff(ex.tail, axis=0) >= -1e-15)
    assert np.all(ex.tail[:, 0] == 1.0)


def test_exact_product_chain_diagonal(small):
    ex = product_chain_exact(small, (0.5, 0.5), 10, ProductBall(0.5), 1, m_max=2)
    assert np.all(ex.dist_expectation == 0.0)


def test_exact_product_chain_whole_space_path(small):
    ex = product_chain_exact(small, (0.0, 2.0), 30, ProductBall(100.0), 4, m_max=3)
    k = np.arange(31)
    assert np.array_equal(ex.tail[0], (k <= 4).astype(float))
    assert np.array_equal(ex.tail[2], (k <= 12).astype(float))


def test_exact_epsilon_small_ball():
    spec = LatticeSpec(0.4, 100)
    res = exact_epsilon(spec, ProductBall(0.5), 2)
    assert res["epsilon"] >= 1 / 81 - 1e-12
    assert res["epsilon"] == pytest.approx(1 / 81, abs=1e-12)


def test_verify_coupling_set_matches_exact():
    spec = LatticeSpec(0.4, 100)
    exact = exact_epsilon(spec, ProductBall(0.5), 2)["epsilon"]
    pts = spec.states[np.abs(spec.states) <= 0.5]
    pairs = [(a, b) for a in pts for b in pts if a != b]
    rep = verify_coupling_set(kernel_for(spec), ProductBall(0.5), 2, Trivial(), pairs, 20000,
                              Streams(7))
    assert rep.ci[0] - 1e-3 <= exact <= rep.ci[1] + 1e-3
    assert rep.weak_contraction_violations == 0


def test_verify_coupling_set_needs_pairs(small):
    with pytest.raises(ValueError):
        verify_coupling_set(kernel_for(small), ProductBall(0.5), 1, Trivial(), [], 10, Streams(0))
