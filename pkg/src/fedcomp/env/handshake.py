"""Turning per-AP cooperation requests into a cluster partition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class JointAction:
    """Per-AP request sets (tuples of neighbor ids)."""

    requests: Tuple[Tuple[int, ...], ...]

    @classmethod
    def validated(cls, requests: Sequence[Sequence[int]], topo) -> "JointAction":
        reqs = tuple(tuple(sorted(int(j) for j in r)) for r in requests)
        if len(reqs) != topo.n_aps:
            raise ValueError(f"expected {topo.n_aps} requests, got {len(reqs)}")
        cap = topo.config.max_cluster_size
        for i, r in enumerate(reqs):
            if len(r) > cap - 1:
                raise ValueError(f"AP {i} requests {len(r)} partners, cap allows {cap - 1}")
            bad = [j for j in r if j not in topo.neighbors[i]]
            if bad:
                raise ValueError(f"AP {i} requests non-neighbors {bad}")
        return cls(reqs)

    @classmethod
    def noop(cls, n_aps: int) -> "JointAction":
        return cls(tuple(() for _ in range(n_aps)))


@dataclass(frozen=True)
class ClusterAssignment:
    cluster_of: np.ndarray  # (N,) cluster id per AP; ids numbered by smallest member
    links: Tuple[Tuple[int, int], ...] = ()  # committed mutual links

    @property
    def clusters(self) -> List[List[int]]:
        out: List[List[int]] = [[] for _ in range(int(self.cluster_of.max()) + 1)] if len(self.cluster_of) else []
        for ap, c in enumerate(self.cluster_of):
            out[int(c)].append(ap)
        return out

    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_of) if len(self.cluster_of) else np.zeros(0, dtype=np.int64)

    @classmethod
    def singletons(cls, n_aps: int) -> "ClusterAssignment":
        return cls(np.arange(n_aps))

    @classmethod
    def from_clusters(cls, clusters, n_aps: int) -> "ClusterAssignment":
        cluster_of = np.empty(n_aps, dtype=np.int64)
        for members in clusters:
            for ap in members:
                cluster_of[ap] = min(members)
        return cls(_relabel(cluster_of))

    def same_partition(self, other: "ClusterAssignment") -> bool:
        return np.array_equal(self.cluster_of, other.cluster_of)


def _relabel(root: np.ndarray) -> np.ndarray:
    """Number clusters 0, 1, ... in order of their smallest member."""
    labels = {}
    out = np.empty(len(root), dtype=np.int64)
    for ap, r in enumerate(root):
        out[ap] = labels.setdefault(int(r), len(labels))
    return out


def mutual_links(requests: Sequence[Sequence[int]]) -> List[Tuple[int, int]]:
    """Pairs (i, j), i < j, where each AP requested the other, ascending order."""
    sets = [set(r) for r in requests]
    links = [(i, j) for i, r in enumerate(requests) for j in r if j > i and i in sets[j]]
    links.sort()
    return links


def resolve_handshake(joint, topo, cfg=None) -> ClusterAssignment:
    """Form clusters from mutual requests.

    Mutual links are visited in ascending (min id, max id) order and merged
    with union-find; a link is dropped when the merged cluster would exceed
    ``max_cluster_size``.
    """
    cfg = cfg or topo.config
    requests = joint.requests if isinstance(joint, JointAction) else joint
    n = topo.n_aps
    parent = list(range(n))
    size = [1] * n

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    committed = []
    for i, j in mutual_links(requests):
        ri, rj = find(i), find(j)
        if ri == rj:
            committed.append((i, j))
            continue
        if size[ri] + size[rj] > cfg.max_cluster_size:
            continue
        if rj < ri:
            ri, rj = rj, ri
        parent[rj] = ri
        size[ri] += size[rj]
        committed.append((i, j))
    root = np.array([find(a) for a in range(n)], dtype=np.int64)
    return ClusterAssignment(_relabel(root), tuple(committed))
