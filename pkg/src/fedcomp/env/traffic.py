"""Poisson-cluster user traffic."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

from fedcomp.errors import ConfigError

Area = Tuple[float, float, float, float]  # xmin, ymin, xmax, ymax


@dataclass(frozen=True)
class TrafficConfig:
    n_users: int = 160
    n_clusters: int = 10
    cluster_radius: float = 40.0
    demand: float = 8.0  # requested amount per user, in rate x slot units
    slot_budget: float = 1.0  # amount delivered per unit of rate in one slot
    lifetime: int = 2  # slots before a request times out
    area: Optional[Area] = None  # None -> bounding box of the AP layout
    cell_edge_ratio: float = 0.7  # edge users sit beyond this fraction of the effective radius

    def __post_init__(self):
        if self.n_users < 0 or self.n_clusters < 0:
            raise ConfigError("user and cluster counts must be non-negative")
        if self.n_users > 0 and self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1 when users exist")
        if self.cluster_radius < 0 or self.demand < 0 or self.slot_budget <= 0:
            raise ConfigError("cluster_radius, demand must be >= 0 and slot_budget > 0")
        if self.lifetime < 1:
            raise ConfigError("lifetime must be >= 1")
        if not 0 < self.cell_edge_ratio <= 1:
            raise ConfigError("cell_edge_ratio must be in (0, 1]")
        if self.area is not None:
            x0, y0, x1, y1 = self.area
            if not (x1 >= x0 and y1 >= y0):
                raise ConfigError(f"degenerate area {self.area}")


@dataclass(frozen=True)
class UserState:
    position: Tuple[float, float]
    demand_remaining: float
    age: int
    parent_cluster: int


@dataclass
class Users:
    """Structure-of-arrays user population; iterating yields UserState records."""

    pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    demand: np.ndarray = field(default_factory=lambda: np.zeros(0))
    age: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    parent: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    parent_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return len(self.demand)

    def __iter__(self) -> Iterator[UserState]:
        for k in range(len(self)):
            yield UserState(
                position=(float(self.pos[k, 0]), float(self.pos[k, 1])),
                demand_remaining=float(self.demand[k]),
                age=int(self.age[k]),
                parent_cluster=int(self.parent[k]),
            )

    def select(self, mask: np.ndarray) -> "Users":
        return Users(self.pos[mask], self.demand[mask], self.age[mask], self.parent[mask], self.parent_pos[mask])

    def concat(self, other: "Users") -> "Users":
        return Users(
            np.concatenate([self.pos, other.pos]),
            np.concatenate([self.demand, other.demand]),
            np.concatenate([self.age, other.age]),
            np.concatenate([self.parent, other.parent]),
            np.concatenate([self.parent_pos, other.parent_pos]),
        )

    def copy(self) -> "Users":
        return Users(self.pos.copy(), self.demand.copy(), self.age.copy(), self.parent.copy(), self.parent_pos.copy())


def sample_users(
    rng: np.random.Generator,
    area: Area,
    n_users: int,
    n_clusters: int,
    cluster_radius: float,
    demand: float = 8.0,
) -> Users:
    """Draw a Poisson-cluster user batch.

    Parents are uniform in ``area``; each user picks a parent uniformly and is
    placed uniformly in the disc of ``cluster_radius`` around it, then clipped
    into the area (clipping never moves a user away from its parent).
    """
    if n_users < 0 or n_clusters < 0:
        raise ConfigError("negative user or cluster count")
    if n_users == 0:
        return Users()
    if n_clusters < 1:
        raise ConfigError("n_clusters must be >= 1 when users exist")
    x0, y0, x1, y1 = area
    lo = np.array([x0, y0])
    hi = np.array([x1, y1])
    parents = lo + rng.random((n_clusters, 2)) * (hi - lo)
    which = rng.integers(0, n_clusters, size=n_users)
    radius = cluster_radius * np.sqrt(rng.random(n_users))
    angle = 2.0 * np.pi * rng.random(n_users)
    home = parents[which]
    pos = np.empty((n_users, 2))
    np.multiply(radius, np.cos(angle), out=pos[:, 0])
    np.multiply(radius, np.sin(angle), out=pos[:, 1])
    pos += home
    np.minimum(np.maximum(pos, lo, out=pos), hi, out=pos)
    return Users(
        pos=pos,
        demand=np.full(n_users, float(demand)),
        age=np.zeros(n_users, dtype=np.int64),
        parent=which.astype(np.int64),
        parent_pos=home,
    )
