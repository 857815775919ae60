"""Several independent worlds on one topology, stepped together.

Every world keeps its own random generator and consumes it exactly as
:func:`fedcomp.env.core.step` would, so world ``r`` of a batch follows the
same trajectory as a lone world with the same generator and actions. The
user population has a fixed size, which lets the worlds share (R, U, ...)
arrays. Quantities that depend only on a user's position are computed once,
when the user arrives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from fedcomp.env import channel as chn
from fedcomp.env.core import CompEnv, WorldState, service_area
from fedcomp.env.handshake import ClusterAssignment, JointAction, resolve_handshake
from fedcomp.env.traffic import Users


@dataclass
class UserCache:
    """Static per-user quantities, leading axes (R, U)."""

    dist: np.ndarray  # (R, U, N)
    power: np.ndarray  # (R, U, N) large-scale received power
    home: np.ndarray  # (R, U) strongest AP
    edge: np.ndarray  # (R, U) cell-edge user
    cover: np.ndarray  # (R, U, N) credited APs
    weight: np.ndarray  # (R, U) 1 / number of credited APs
    bins: np.ndarray  # (R, U, N) flat (AP, ring, sector) observation bin, -1 outside the disc


@dataclass
class WorldBatch:
    t: int
    pos: np.ndarray  # (R, U, 2)
    demand: np.ndarray  # (R, U)
    age: np.ndarray  # (R, U)
    cache: UserCache
    cluster_of: np.ndarray  # (R, N)
    rngs: List[np.random.Generator]

    @property
    def n_worlds(self) -> int:
        return len(self.rngs)

    def world(self, r: int) -> WorldState:
        """World ``r`` as a standalone state (arrays are copied, the generator is shared)."""
        n = self.pos.shape[1]
        users = Users(
            pos=self.pos[r].copy(),
            demand=self.demand[r].copy(),
            age=self.age[r].copy(),
            parent=np.zeros(n, dtype=np.int64),
            parent_pos=np.zeros((n, 2)),
        )
        return WorldState(
            self.t, users, ClusterAssignment(self.cluster_of[r].copy()), self.rngs[r], self.cache.dist[r].copy()
        )


class BatchEnv:
    """Vectorized stepping of worlds that share one :class:`CompEnv` configuration."""

    def __init__(self, env: CompEnv):
        self.env = env
        self.topo = env.topo
        t = env.traffic
        self.n_users = t.n_users
        area = service_area(env.topo, t)
        self.lo = np.array(area[:2], dtype=float)
        self.hi = np.array(area[2:], dtype=float)
        self.edge_radius = t.cell_edge_ratio * env.topo.effective_radius
        self.threshold = env.topo.config.effective_threshold
        self.bin_offset = np.arange(env.topo.n_aps) * env.obs_cfg.compact_dim

    # users ---------------------------------------------------------------

    def _fresh(self, rngs: Sequence[np.random.Generator], counts: Sequence[int]) -> np.ndarray:
        """Positions of ``counts[r]`` new users per world, in world order.

        Draws follow :func:`fedcomp.env.traffic.sample_users` call for call.
        """
        t = self.env.traffic
        total = int(sum(counts))
        if total == 0:
            return np.zeros((0, 2))
        home = np.empty((total, 2))
        u = np.empty((2, total))
        k = 0
        for rng, m in zip(rngs, counts):
            if m == 0:
                continue
            parents = self.lo + rng.random((t.n_clusters, 2)) * (self.hi - self.lo)
            home[k : k + m] = parents[rng.integers(0, t.n_clusters, size=m)]
            u[0, k : k + m] = rng.random(m)
            u[1, k : k + m] = rng.random(m)
            k += m
        radius = t.cluster_radius * np.sqrt(u[0])
        angle = 2.0 * np.pi * u[1]
        pos = np.empty((total, 2))
        np.multiply(radius, np.cos(angle), out=pos[:, 0])
        np.multiply(radius, np.sin(angle), out=pos[:, 1])
        pos += home
        return np.minimum(np.maximum(pos, self.lo, out=pos), self.hi, out=pos)

    def _describe(self, pos: np.ndarray) -> UserCache:
        """Static quantities of users at ``pos`` (M, 2); arrays have leading axis M."""
        env = self.env
        cfg = env.obs_cfg
        radius = self.topo.effective_radius
        dist = chn.distances(pos, self.topo.positions)
        power = chn.mean_power(dist, env.ch)
        cover = power >= self.threshold
        orphan = ~cover.any(axis=-1)
        if orphan.any():
            cover[orphan, np.argmin(dist[orphan], axis=-1)] = True
        bins = np.full(dist.shape, -1, dtype=np.intp)
        if radius > 0:
            u, a = np.nonzero(dist <= radius)
            rel = pos[u] - self.topo.positions[a]
            angle = np.arctan2(rel[:, 1], rel[:, 0]) % (2 * np.pi)
            sector = np.minimum((angle * (cfg.n_sectors / (2 * np.pi))).astype(np.intp), cfg.n_sectors - 1)
            ring = (dist[u, a] >= cfg.ring_split * radius).astype(np.intp)
            bins[u, a] = self.bin_offset[a] + ring * cfg.n_sectors + sector
        return UserCache(
            dist=dist,
            power=power,
            home=np.argmax(power, axis=-1),
            edge=dist.min(axis=-1) > self.edge_radius if dist.shape[-1] else np.zeros(len(dist), dtype=bool),
            cover=cover,
            weight=1.0 / cover.sum(axis=-1),
            bins=bins,
        )

    def reset(self, rngs: Sequence[np.random.Generator]) -> WorldBatch:
        r, u, n = len(rngs), self.n_users, self.topo.n_aps
        pos = self._fresh(rngs, [u] * r)
        c = self._describe(pos)
        cache = UserCache(**{k: v.reshape((r, u) + v.shape[1:]) for k, v in vars(c).items()})
        return WorldBatch(
            t=0,
            pos=pos.reshape(r, u, 2),
            demand=np.full((r, u), float(self.env.traffic.demand)),
            age=np.zeros((r, u), dtype=np.int64),
            cache=cache,
            cluster_of=np.tile(np.arange(n), (r, 1)),
            rngs=list(rngs),
        )

    # service --------------------------------------------------------------

    def serve(self, batch: WorldBatch, cluster_of: np.ndarray, fading: Optional[np.ndarray] = None):
        """Per-user rate, per-AP rewards (R, N) and global rewards (R,)."""
        ch = self.env.ch
        c = batch.cache
        power = c.power if fading is None else c.power * fading
        mask = cluster_of[:, None, :] == np.take_along_axis(cluster_of, c.home, axis=1)[:, :, None]
        r = chn.rate(chn.sinr_matrix(power, mask, ch.noise_power))
        if self.env.reward_mode == "cell_edge_sum_rate":
            qos = np.where(c.edge, r, 0.0)
        else:
            qos = np.minimum(r * self.env.traffic.slot_budget, batch.demand)
        per_ap = np.einsum("ru,run->rn", qos * c.weight, c.cover)
        return r, per_ap, qos.sum(axis=-1)

    def step(self, batch: WorldBatch, local_actions: Sequence[Sequence[int]]):
        """Advance every world one slot; returns (next_batch, per_ap (R, N), global (R,)).

        The input batch is consumed: its arrays are updated in place and
        shared with the returned batch.
        """
        env = self.env
        rr, uu, nn = batch.pos.shape[0], batch.pos.shape[1], self.topo.n_aps
        cluster_of = np.empty((rr, nn), dtype=np.int64)
        for w, idx in enumerate(local_actions):
            joint = JointAction(tuple(env.actions[ap][int(k)] for ap, k in enumerate(idx)))
            cluster_of[w] = resolve_handshake(joint, self.topo).cluster_of
        fading = None
        if env.ch.fading != "unit":
            fading = np.stack([chn.draw_fading(g, (uu, nn), env.ch) for g in batch.rngs])
        rate, per_ap, glob = self.serve(batch, cluster_of, fading)

        t = env.traffic
        demand = batch.demand - np.minimum(rate * t.slot_budget, batch.demand)
        age = batch.age + 1
        gone = (age >= t.lifetime) | (demand <= 0)
        pos, cache = batch.pos, batch.cache
        if gone.any():
            fresh = self._fresh(batch.rngs, gone.sum(axis=1).tolist())
            new = self._describe(fresh)
            flat = np.flatnonzero(gone)
            pos.reshape(rr * uu, 2)[flat] = fresh
            demand.reshape(-1)[flat] = float(t.demand)
            age.reshape(-1)[flat] = 0
            for k, v in vars(cache).items():
                v.reshape((rr * uu,) + v.shape[2:])[flat] = getattr(new, k)
        nxt = WorldBatch(batch.t + 1, pos, demand, age, cache, cluster_of, batch.rngs)
        return nxt, per_ap, glob

    # observation ------------------------------------------------------------

    def compact(self, batch: WorldBatch) -> np.ndarray:
        """Compact sector counts, shape (R, N, 2 * sectors)."""
        rr, nn, d = batch.pos.shape[0], self.topo.n_aps, self.env.obs_cfg.compact_dim
        bins = batch.cache.bins
        if bins.shape[1] == 0:
            return np.zeros((rr, nn, d))
        w, u, a = np.nonzero(bins >= 0)
        flat = w * (nn * d) + bins[w, u, a]
        return np.bincount(flat, minlength=rr * nn * d).reshape(rr, nn, d).astype(float)
