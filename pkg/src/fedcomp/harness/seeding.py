"""Seed derivation: independent, reproducible streams from one master seed.

Every stream seed is a pure function of (master, stream key, index), so
adding agents never changes the streams of existing ones.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream keys
ENV = 1
AGENT = 2
INIT = 3
BASELINE = 4


def splitmix64(x: int) -> int:
    """One output of the splitmix64 generator seeded at state ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Fold a path of integers into the master seed, one splitmix round per element."""
    s = splitmix64(int(master) & MASK64)
    for p in path:
        s = splitmix64(s ^ (int(p) & MASK64))
    return s


def generator(master: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *path)))


def agent_generators(master: int, n_agents: int):
    return [generator(master, AGENT, i) for i in range(n_agents)]
