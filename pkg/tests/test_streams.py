import numpy as np
import pytest

from subgeo._streams import Streams, resolve_threads, seed_derive


def test_same_unit_same_stream():
    assert np.array_equal(seed_derive(7, 3).random(5), seed_derive(7, 3).random(5))


def test_different_units_differ():
    assert not np.array_equal(seed_derive(7, 3).random(5), seed_derive(7, 4).random(5))
    s = Streams(7)
    assert not np.array_equal(s.unit(0).random(5), s.child(1).unit(0).random(5))


def test_map_independent_of_threads():
    def work(i, rng):
        return rng.normal(size=1000).sum() + i

    a = Streams(11, threads=2).map(work, 16)
    b = Streams(11, threads=8).map(work, 16)
    assert a == b


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("SUBGEO_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    with pytest.raises(ValueError):
        resolve_threads(0)
