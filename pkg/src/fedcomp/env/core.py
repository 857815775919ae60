"""World state, rewards and the slot transition of the CoMP environment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from fedcomp.env import channel as chn
from fedcomp.env.channel import ChannelConfig
from fedcomp.env.handshake import ClusterAssignment, JointAction, resolve_handshake
from fedcomp.env.observation import ObservationConfig, all_grids, compact_counts
from fedcomp.env.topology import (
    NetworkTopology,
    TopologyConfig,
    action_slot_map,
    build_topology,
    canonical_actions,
    enumerate_actions,
)
from fedcomp.env.traffic import TrafficConfig, Users, sample_users
from fedcomp.errors import ConfigError

REWARD_MODES = ("cell_edge_sum_rate", "served_demand")


@dataclass
class WorldState:
    t: int
    users: Users
    assignment: ClusterAssignment
    rng: np.random.Generator
    # (U, N) user-AP distances, cached because users do not move during their lifetime
    dist: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def user_distances(world: WorldState, topo: NetworkTopology) -> np.ndarray:
    if world.dist is None or world.dist.shape != (len(world.users), topo.n_aps):
        world.dist = chn.distances(world.users.pos, topo.positions)
    return world.dist


@dataclass(frozen=True)
class ServiceOutcome:
    """Per-user quantities of one served slot."""

    sinr: np.ndarray
    rate: np.ndarray
    qos: np.ndarray
    cover: np.ndarray  # (U, N) bool, effective-region membership used for attribution
    weight: np.ndarray  # (U,) 1 / |covering APs|


def service_area(topo: NetworkTopology, traffic: TrafficConfig):
    return traffic.area if traffic.area is not None else topo.bounds()


def cell_edge_mask(dist: np.ndarray, topo: NetworkTopology, traffic: TrafficConfig) -> np.ndarray:
    if dist.shape[1] == 0:
        return np.zeros(dist.shape[0], dtype=bool)
    return dist.min(axis=1) > traffic.cell_edge_ratio * topo.effective_radius


def attribution(
    dist: np.ndarray, topo: NetworkTopology, ch: ChannelConfig, mp: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Which APs a user's QoS is credited to, and with what weight.

    Users inside several effective regions are split evenly between them, so
    per-AP rewards sum exactly to the global reward. A user outside every
    region is credited to its nearest AP.
    """
    if mp is None:
        mp = chn.mean_power(dist, ch)
    cover = mp >= topo.config.effective_threshold
    orphan = ~cover.any(axis=1)
    if orphan.any():
        cover[orphan, np.argmin(dist[orphan], axis=1)] = True
    return cover, 1.0 / cover.sum(axis=1)


def serve(
    users: Users,
    assignment: ClusterAssignment,
    topo: NetworkTopology,
    ch: ChannelConfig,
    traffic: TrafficConfig,
    reward_mode: str,
    fading: Optional[np.ndarray] = None,
    dist: Optional[np.ndarray] = None,
) -> ServiceOutcome:
    if reward_mode not in REWARD_MODES:
        raise ConfigError(f"reward_mode must be one of {REWARD_MODES}, got {reward_mode!r}")
    if dist is None:
        dist = chn.distances(users.pos, topo.positions)
    mp = chn.mean_power(dist, ch)
    power = mp if fading is None else mp * fading
    mask = chn.serving_mask(mp, assignment.cluster_of) if len(users) else np.zeros(dist.shape, dtype=bool)
    sinr = chn.sinr_matrix(power, mask, ch.noise_power)
    r = chn.rate(sinr)
    if reward_mode == "cell_edge_sum_rate":
        qos = np.where(cell_edge_mask(dist, topo, traffic), r, 0.0)
    else:
        qos = np.minimum(r * traffic.slot_budget, users.demand)
    cover, weight = attribution(dist, topo, ch, mp)
    return ServiceOutcome(sinr=sinr, rate=r, qos=qos, cover=cover, weight=weight)


def split_reward(outcome: ServiceOutcome) -> Tuple[float, np.ndarray]:
    """Global reward and its per-AP decomposition."""
    global_reward = float(outcome.qos.sum())
    per_ap = np.einsum("u,un->n", outcome.qos * outcome.weight, outcome.cover)
    return global_reward, per_ap


def decompose_reward(
    world: WorldState,
    topo: NetworkTopology,
    ch: ChannelConfig,
    traffic: TrafficConfig = TrafficConfig(),
    reward_mode: str = "cell_edge_sum_rate",
    fading: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    dist = user_distances(world, topo)
    return split_reward(serve(world.users, world.assignment, topo, ch, traffic, reward_mode, fading, dist))


def deliver(users: Users, rate: np.ndarray, slot_budget: float) -> Users:
    """Serve one slot: remaining demand shrinks by rate * budget (never below 0), age grows."""
    delivered = np.minimum(rate * slot_budget, users.demand)
    return Users(
        pos=users.pos,
        demand=users.demand - delivered,
        age=users.age + 1,
        parent=users.parent,
        parent_pos=users.parent_pos,
    )


def initial_world(topo: NetworkTopology, traffic: TrafficConfig, rng: np.random.Generator) -> WorldState:
    users = sample_users(
        rng, service_area(topo, traffic), traffic.n_users, traffic.n_clusters, traffic.cluster_radius, traffic.demand
    )
    return WorldState(t=0, users=users, assignment=ClusterAssignment.singletons(topo.n_aps), rng=rng)


def step(
    world: WorldState,
    joint: JointAction,
    topo: NetworkTopology,
    ch: ChannelConfig,
    traffic: TrafficConfig,
    reward_mode: str = "cell_edge_sum_rate",
):
    """Advance one slot: cluster, serve, age out, replenish.

    Returns (next_world, per_ap_rewards, global_reward). The returned world
    shares the random generator with the input world.
    """
    assignment = resolve_handshake(joint, topo)
    users = world.users
    fading = chn.draw_fading(world.rng, (len(users), topo.n_aps), ch) if ch.fading != "unit" else None
    dist = user_distances(world, topo)
    outcome = serve(users, assignment, topo, ch, traffic, reward_mode, fading, dist)
    global_reward, per_ap = split_reward(outcome)

    served = deliver(users, outcome.rate, traffic.slot_budget)
    gone = np.nonzero((served.age >= traffic.lifetime) | (served.demand <= 0))[0]
    next_dist = dist
    if len(gone):
        # replacements take the freed slots, in slot order
        fresh = sample_users(
            world.rng, service_area(topo, traffic), len(gone), traffic.n_clusters, traffic.cluster_radius, traffic.demand
        )
        served = served.copy()
        next_dist = dist.copy()
        served.pos[gone] = fresh.pos
        served.demand[gone] = fresh.demand
        served.age[gone] = fresh.age
        served.parent[gone] = fresh.parent
        served.parent_pos[gone] = fresh.parent_pos
        next_dist[gone] = chn.distances(fresh.pos, topo.positions)
    nxt = WorldState(t=world.t + 1, users=served, assignment=assignment, rng=world.rng, dist=next_dist)
    return nxt, per_ap, global_reward


class CompEnv:
    """Bundles topology, channel, traffic and observation settings with cached action tables.

    Agents act through action indices into each AP's ``enumerate_actions`` list.
    """

    def __init__(
        self,
        topology: TopologyConfig = TopologyConfig(),
        channel: ChannelConfig = ChannelConfig(),
        traffic: TrafficConfig = TrafficConfig(),
        observation: ObservationConfig = ObservationConfig(),
        reward_mode: str = "cell_edge_sum_rate",
        topo: Optional[NetworkTopology] = None,
    ):
        if reward_mode not in REWARD_MODES:
            raise ConfigError(f"reward_mode must be one of {REWARD_MODES}, got {reward_mode!r}")
        self.ch = channel
        self.traffic = traffic
        self.obs_cfg = observation
        self.reward_mode = reward_mode
        self.topo = topo if topo is not None else build_topology(topology, channel)
        self.actions: List[List[Tuple[int, ...]]] = [
            enumerate_actions(self.topo, ap) for ap in range(self.topo.n_aps)
        ]
        self.n_actions = np.array([len(a) for a in self.actions])
        self.n_slots = len(canonical_actions(self.topo.config))
        self.slot_maps = [action_slot_map(self.topo, ap) for ap in range(self.topo.n_aps)]

    @property
    def n_aps(self) -> int:
        return self.topo.n_aps

    def reset(self, rng: np.random.Generator) -> WorldState:
        return initial_world(self.topo, self.traffic, rng)

    def joint_from_indices(self, indices) -> JointAction:
        return JointAction(tuple(self.actions[ap][int(k)] for ap, k in enumerate(indices)))

    def step(self, world: WorldState, indices):
        return step(world, self.joint_from_indices(indices), self.topo, self.ch, self.traffic, self.reward_mode)

    def compact(self, world: WorldState) -> np.ndarray:
        return compact_counts(
            world.users.pos, self.topo.positions, self.topo.effective_radius, self.obs_cfg, user_distances(world, self.topo)
        )

    def grids(self, world: WorldState) -> np.ndarray:
        return all_grids(world, self.topo, self.obs_cfg)

    def global_reward(self, world: WorldState, assignment: ClusterAssignment) -> float:
        dist = user_distances(world, self.topo)
        outcome = serve(world.users, assignment, self.topo, self.ch, self.traffic, self.reward_mode, dist=dist)
        return float(outcome.qos.sum())
