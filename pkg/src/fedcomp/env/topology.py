"""Hexagonal AP layout, neighbor graph and per-AP cooperation action sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from fedcomp.env.channel import ChannelConfig, effective_radius
from fedcomp.errors import ConfigError

PAIR_RESTRICTIONS = ("adjacent_pairs_only", "all_pairs")

# Neighbors are APs closer than this multiple of the smaller lattice spacing.
NEIGHBOR_FACTOR = 1.2

# Hex neighbor directions fall in the middle of these 60-degree buckets.
N_DIRECTIONS = 6


@dataclass(frozen=True)
class TopologyConfig:
    rows: int = 4
    cols: int = 5
    spacing_x: float = 44.3  # column pitch, m
    spacing_y: float = 52.0  # in-column inter-site distance, m
    max_cluster_size: int = 3
    effective_threshold: float = 5.5e-6  # W; ~32 m radius at the default channel
    pair_restriction: str = "adjacent_pairs_only"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"topology needs rows, cols >= 1, got {self.rows}x{self.cols}")
        if self.max_cluster_size < 1:
            raise ConfigError("max_cluster_size must be >= 1")
        if not (self.spacing_x > 0 and self.spacing_y > 0):
            raise ConfigError("lattice spacings must be > 0")
        if not self.effective_threshold > 0:
            raise ConfigError("effective_threshold must be > 0")
        if self.pair_restriction not in PAIR_RESTRICTIONS:
            raise ConfigError(f"pair_restriction must be one of {PAIR_RESTRICTIONS}")


@dataclass(frozen=True)
class NetworkTopology:
    config: TopologyConfig
    positions: np.ndarray  # (N, 2) meters, row i is AP i
    neighbors: Tuple[Tuple[int, ...], ...]
    effective_radius: float

    @property
    def n_aps(self) -> int:
        return len(self.positions)

    @property
    def aps(self) -> List[Tuple[int, Tuple[float, float]]]:
        return [(i, (float(x), float(y))) for i, (x, y) in enumerate(self.positions)]

    def are_neighbors(self, i: int, j: int) -> bool:
        return j in self.neighbors[i]

    def bounds(self) -> Tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the AP layout."""
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def lattice_positions(cfg: TopologyConfig) -> np.ndarray:
    """Column-offset hex lattice, ids assigned column-major (id = col * rows + row).

    Odd columns are shifted up by half the in-column spacing, so with
    spacing_x ~ spacing_y * sqrt(3) / 2 every interior AP has six
    near-equidistant neighbors.
    """
    pos = np.empty((cfg.rows * cfg.cols, 2))
    for c in range(cfg.cols):
        for r in range(cfg.rows):
            shift = 0.5 * cfg.spacing_y if c % 2 else 0.0
            pos[c * cfg.rows + r] = (c * cfg.spacing_x, r * cfg.spacing_y + shift)
    return pos


def neighbors_from_positions(pos: np.ndarray, radius: float) -> Tuple[Tuple[int, ...], ...]:
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    n = len(pos)
    return tuple(tuple(int(j) for j in range(n) if j != i and d[i, j] <= radius) for i in range(n))


def build_topology(cfg: TopologyConfig, ch: ChannelConfig) -> NetworkTopology:
    pos = lattice_positions(cfg)
    radius = NEIGHBOR_FACTOR * min(cfg.spacing_x, cfg.spacing_y)
    return NetworkTopology(
        config=cfg,
        positions=pos,
        neighbors=neighbors_from_positions(pos, radius),
        effective_radius=effective_radius(cfg.effective_threshold, ch),
    )


def subtopology(topo: NetworkTopology, members) -> NetworkTopology:
    """Induced topology on ``members`` with ids remapped to 0..k-1 in sorted order."""
    members = sorted(int(m) for m in members)
    index = {m: k for k, m in enumerate(members)}
    nbrs = tuple(tuple(index[j] for j in topo.neighbors[m] if j in index) for m in members)
    return NetworkTopology(
        config=topo.config,
        positions=topo.positions[members].copy(),
        neighbors=nbrs,
        effective_radius=topo.effective_radius,
    )


def patch_topology(topo: NetworkTopology, center: int) -> NetworkTopology:
    """One AP plus its neighbor ring (7 APs around an interior AP)."""
    return subtopology(topo, (center,) + topo.neighbors[center])


def _allowed_subset(topo: NetworkTopology, subset, restriction: str) -> bool:
    if restriction == "all_pairs" or len(subset) < 2:
        return True
    return all(topo.are_neighbors(a, b) for a, b in itertools.combinations(subset, 2))


def enumerate_actions(topo: NetworkTopology, ap: int, cfg: TopologyConfig = None) -> List[Tuple[int, ...]]:
    """Ordered cooperation requests of one AP.

    Index 0 is the empty request (no-op), followed by request sets of growing
    size, each size in lexicographic neighbor-id order. Under
    ``adjacent_pairs_only`` a multi-AP request must consist of mutually
    neighboring APs.
    """
    cfg = cfg or topo.config
    if not 0 <= ap < topo.n_aps:
        raise IndexError(f"AP {ap} does not exist")
    nbrs = topo.neighbors[ap]
    actions: List[Tuple[int, ...]] = [()]
    for size in range(1, cfg.max_cluster_size):
        for subset in itertools.combinations(nbrs, size):
            if _allowed_subset(topo, subset, cfg.pair_restriction):
                actions.append(subset)
    return actions


def direction_slot(topo: NetworkTopology, ap: int, other: int) -> int:
    dx, dy = topo.positions[other] - topo.positions[ap]
    angle = np.degrees(np.arctan2(dy, dx)) % 360.0
    return int(angle // (360.0 / N_DIRECTIONS)) % N_DIRECTIONS


def canonical_actions(cfg: TopologyConfig) -> List[Tuple[int, ...]]:
    """Action list of an idealized interior AP, expressed in direction slots.

    Consecutive direction slots are the adjacent neighbor pairs of a hex
    lattice. Every AP's local actions map into this shared list so parameters
    keep one meaning across agents.
    """
    slots = range(N_DIRECTIONS)
    out: List[Tuple[int, ...]] = [()]
    for size in range(1, min(cfg.max_cluster_size, N_DIRECTIONS + 1)):
        for subset in itertools.combinations(slots, size):
            if cfg.pair_restriction == "adjacent_pairs_only" and size >= 2:
                ok = all((b - a) % N_DIRECTIONS in (1, N_DIRECTIONS - 1) for a, b in itertools.combinations(subset, 2))
                if not ok:
                    continue
            out.append(subset)
    return out


def action_slot_map(topo: NetworkTopology, ap: int, cfg: TopologyConfig = None) -> np.ndarray:
    """Canonical index of each local action of ``ap`` (same order as enumerate_actions)."""
    cfg = cfg or topo.config
    canon = {a: k for k, a in enumerate(canonical_actions(cfg))}
    slots = {j: direction_slot(topo, ap, j) for j in topo.neighbors[ap]}
    if len(set(slots.values())) != len(slots):
        raise ConfigError(f"AP {ap}: two neighbors share a direction slot; layout is not hexagonal")
    out = []
    for action in enumerate_actions(topo, ap, cfg):
        key = tuple(sorted(slots[j] for j in action))
        if key not in canon:
            raise ConfigError(f"AP {ap}: action {action} has no canonical counterpart {key}")
        out.append(canon[key])
    return np.asarray(out, dtype=np.intp)
