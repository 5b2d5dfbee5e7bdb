"""Counter-based noise streams.

Each particle owns an independent Philox stream keyed by (seed, tag) with the
particle index in the high counter word. A particle's draws therefore depend
only on (seed, particle, tag): they do not change with the ensemble size, the
order in which particles are generated, or how the work is split.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

TAG_INCREMENTS = 0
TAG_INITIAL = 1
TAG_BOOTSTRAP = 2
_MASK = (1 << 64) - 1
_workers = 1


def set_workers(k: int) -> None:
    """Cap on threads used for noise generation; draws do not depend on it."""
    global _workers
    _workers = max(1, int(k))


def particle_generator(seed: int, particle: int, tag: int) -> np.random.Generator:
    bitgen = np.random.Philox(key=np.array([seed & _MASK, tag & _MASK], dtype=np.uint64),
                              counter=np.array([0, 0, 0, particle & _MASK], dtype=np.uint64))
    return np.random.Generator(bitgen)


def brownian_increments(seed: int, n: int, n_steps: int, dt: float,
                        start: int = 0) -> np.ndarray:
    """(n, n_steps) array of N(0, dt) increments for particles start..start+n-1."""
    out = np.empty((n, n_steps))

    def fill(lo, hi):
        for i in range(lo, hi):
            out[i] = particle_generator(seed, start + i, TAG_INCREMENTS).standard_normal(n_steps)

    if _workers == 1 or n < 256:
        fill(0, n)
    else:
        cuts = np.linspace(0, n, _workers + 1).astype(int)
        with ThreadPoolExecutor(_workers) as pool:
            list(pool.map(fill, cuts[:-1], cuts[1:]))
    out *= np.sqrt(dt)
    return out


def initial_draws(seed: int, n: int, start: int = 0):
    """One uniform and one standard normal per particle, for the initial law."""
    unif = np.empty(n)
    gauss = np.empty(n)
    for i in range(n):
        g = particle_generator(seed, start + i, TAG_INITIAL)
        unif[i] = g.random()
        gauss[i] = g.standard_normal()
    return unif, gauss


def aux_generator(seed: int, tag: int = TAG_BOOTSTRAP) -> np.random.Generator:
    """Stream for auxiliary randomness (bootstrap, test fixtures)."""
    return particle_generator(seed, 0, tag)
