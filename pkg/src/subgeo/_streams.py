"""Reproducible per-unit random streams and a thread work queue.

Every unit of work (a replicate block, a check point) gets its own
counter-based Philox generator derived from ``(master, path..., index)``,
and results are gathered in index order, so outputs do not depend on the
number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = ["seed_derive", "Streams", "run_units", "resolve_threads"]


def seed_derive(master: int, replicate: int, path: Sequence[int] = ()) -> np.random.Generator:
    """Philox generator for unit ``replicate`` under ``master`` (and an optional sub-path)."""
    seq = np.random.SeedSequence(int(master) & (2**64 - 1), spawn_key=(*path, int(replicate)))
    return np.random.Generator(np.random.Philox(seq))


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("SUBGEO_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError("thread count must be positive")
    return threads


@dataclass(frozen=True)
class Streams:
    """A named family of unit streams; ``child`` opens an independent sub-family."""

    master: int
    path: tuple = ()
    threads: int = 1

    def unit(self, i: int) -> np.random.Generator:
        return seed_derive(self.master, i, self.path)

    def child(self, tag: int) -> "Streams":
        return Streams(self.master, (*self.path, int(tag)), self.threads)

    def map(self, fn: Callable[[int, np.random.Generator], object], n_units: int) -> list:
        return run_units(fn, n_units, self, self.threads)


def run_units(fn: Callable, n_units: int, streams: Streams, threads: int = 1) -> list:
    """Evaluate ``fn(i, streams.unit(i))`` for every unit; results in index order."""
    if threads <= 1 or n_units <= 1:
        return [fn(i, streams.unit(i)) for i in range(n_units)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, i, streams.unit(i)) for i in range(n_units)]
        return [f.result() for f in futures]
