"""Non-learning clustering policies: fixed tiling, greedy merging, random
requests and an exhaustive search for small patches."""

from __future__ import annotations

import itertools
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from fedcomp.env.channel import ChannelConfig
from fedcomp.env.core import REWARD_MODES, WorldState, serve, user_distances
from fedcomp.env.handshake import ClusterAssignment, JointAction, resolve_handshake
from fedcomp.env.topology import NetworkTopology, enumerate_actions
from fedcomp.env.traffic import TrafficConfig
from fedcomp.errors import ConfigError

BASELINE_KINDS = ("fixed", "greedy", "random", "exhaustive")
EXHAUSTIVE_LIMIT = 7


def global_reward(
    world: WorldState,
    assignment: ClusterAssignment,
    topo: NetworkTopology,
    ch: ChannelConfig,
    traffic: TrafficConfig = TrafficConfig(),
    reward_mode: str = "cell_edge_sum_rate",
) -> float:
    """Global reward of serving the current users under ``assignment`` (no fading)."""
    dist = user_distances(world, topo)
    return float(serve(world.users, assignment, topo, ch, traffic, reward_mode, dist=dist).qos.sum())


# reachability ------------------------------------------------------------------


def _block_requests(topo: NetworkTopology, block: Tuple[int, ...]) -> Optional[Dict[int, Tuple[int, ...]]]:
    """Request sets, restricted to ``block``, whose handshake forms exactly ``block``."""
    if len(block) == 1:
        return {block[0]: ()}
    members = set(block)
    options = [[a for a in enumerate_actions(topo, ap) if set(a) <= members and a] for ap in block]
    for combo in itertools.product(*options):
        requests = [()] * topo.n_aps
        for ap, req in zip(block, combo):
            requests[ap] = req
        cluster_of = resolve_handshake(JointAction(tuple(requests)), topo).cluster_of
        if all(cluster_of[ap] == cluster_of[block[0]] for ap in block):
            return dict(zip(block, combo))
    return None


def block_reachable(topo: NetworkTopology, block: Sequence[int]) -> bool:
    """Whether some joint action makes ``block`` one cluster (size cap included)."""
    block = tuple(sorted(block))
    if len(block) > topo.config.max_cluster_size:
        return False
    return _cached_requests(topo, block) is not None


def _cached_requests(topo: NetworkTopology, block: Tuple[int, ...]):
    cache = _REQUEST_CACHE.setdefault(id(topo), (topo, {}))[1]
    if block not in cache:
        cache[block] = _block_requests(topo, block)
    return cache[block]


_REQUEST_CACHE: Dict[int, Tuple[NetworkTopology, dict]] = {}


def joint_action_for(assignment: ClusterAssignment, topo: NetworkTopology) -> Optional[JointAction]:
    """A joint action whose handshake yields ``assignment``, or None if unreachable."""
    requests: List[Tuple[int, ...]] = [()] * topo.n_aps
    for block in assignment.clusters:
        block = tuple(sorted(block))
        if len(block) > topo.config.max_cluster_size:
            return None
        found = _cached_requests(topo, block)
        if found is None:
            return None
        for ap, req in found.items():
            requests[ap] = req
    return JointAction(tuple(requests))


# fixed tiling ----------------------------------------------------------------------


def fixed_scheme(topo: NetworkTopology) -> ClusterAssignment:
    """Deterministic tiling used as the fixed-cooperation stand-in.

    APs are scanned in id order; an ungrouped AP takes ungrouped partners
    from its neighbor list in ascending id order as long as the group stays
    within the size cap and remains reachable by a handshake.
    """
    grouped = np.zeros(topo.n_aps, dtype=bool)
    clusters = []
    cap = topo.config.max_cluster_size
    for ap in range(topo.n_aps):
        if grouped[ap]:
            continue
        group = [ap]
        for nb in topo.neighbors[ap]:
            if len(group) >= cap:
                break
            if grouped[nb]:
                continue
            if block_reachable(topo, group + [nb]):
                group.append(nb)
        grouped[group] = True
        clusters.append(group)
    return ClusterAssignment.from_clusters(clusters, topo.n_aps)


# greedy ---------------------------------------------------------------------------------


def greedy_clustering(
    world: WorldState,
    topo: NetworkTopology,
    ch: ChannelConfig,
    traffic: TrafficConfig = TrafficConfig(),
    reward_mode: str = "cell_edge_sum_rate",
) -> ClusterAssignment:
    """Repeatedly apply the merge with the largest positive reward gain.

    Starting from singletons, every pair of current clusters that together
    respect the size cap and are handshake-reachable is a candidate; the
    best candidate (first in ascending cluster order on ties) is merged
    until no merge improves the global reward.
    """
    clusters = [[ap] for ap in range(topo.n_aps)]
    current = ClusterAssignment.singletons(topo.n_aps)
    value = global_reward(world, current, topo, ch, traffic, reward_mode)
    cap = topo.config.max_cluster_size
    while True:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            merged = sorted(clusters[a] + clusters[b])
            if len(merged) > cap:
                continue
            if not any(topo.are_neighbors(i, j) for i in clusters[a] for j in clusters[b]):
                continue
            if not block_reachable(topo, merged):
                continue
            trial = [c for k, c in enumerate(clusters) if k not in (a, b)] + [merged]
            cand = ClusterAssignment.from_clusters(trial, topo.n_aps)
            v = global_reward(world, cand, topo, ch, traffic, reward_mode)
            if v > value and (best is None or v > best[0]):
                best = (v, trial, cand)
        if best is None:
            return current
        value, clusters, current = best[0], best[1], best[2]
        clusters = sorted(clusters)


# exhaustive ---------------------------------------------------------------------------


def set_partitions(items: Sequence[int]) -> Iterator[List[List[int]]]:
    """All set partitions of ``items`` (restricted-growth order)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1 :]


def candidate_partitions(topo: NetworkTopology) -> List[ClusterAssignment]:
    """Reachable partitions, deduplicated, in lexicographic order of cluster labels."""
    seen = {}
    for part in set_partitions(range(topo.n_aps)):
        if all(block_reachable(topo, block) for block in part):
            a = ClusterAssignment.from_clusters(part, topo.n_aps)
            seen.setdefault(tuple(a.cluster_of.tolist()), a)
    return [seen[k] for k in sorted(seen)]


def exhaustive_oracle(
    world: WorldState,
    topo: NetworkTopology,
    ch: ChannelConfig,
    traffic: TrafficConfig = TrafficConfig(),
    reward_mode: str = "cell_edge_sum_rate",
) -> Tuple[ClusterAssignment, float]:
    """Best reachable partition of a small patch; ties go to the lexicographically first."""
    if topo.n_aps > EXHAUSTIVE_LIMIT:
        raise ConfigError(f"exhaustive search is limited to {EXHAUSTIVE_LIMIT} APs, got {topo.n_aps}")
    best, best_value = None, -np.inf
    for cand in candidate_partitions(topo):
        v = global_reward(world, cand, topo, ch, traffic, reward_mode)
        if v > best_value:
            best, best_value = cand, v
    return best, float(best_value)


# random ---------------------------------------------------------------------------------


def random_policy(rng: np.random.Generator, topo: NetworkTopology, actions=None) -> JointAction:
    """Each AP picks uniformly from its own action list."""
    actions = actions or [enumerate_actions(topo, ap) for ap in range(topo.n_aps)]
    return JointAction(tuple(acts[int(rng.integers(len(acts)))] for acts in actions))


def baseline_assignment(kind: str, world, topo, ch, traffic, reward_mode, rng=None) -> ClusterAssignment:
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"baseline kind must be one of {BASELINE_KINDS}, got {kind!r}")
    if reward_mode not in REWARD_MODES:
        raise ConfigError(f"reward_mode must be one of {REWARD_MODES}")
    if kind == "fixed":
        return fixed_scheme(topo)
    if kind == "greedy":
        return greedy_clustering(world, topo, ch, traffic, reward_mode)
    if kind == "exhaustive":
        return exhaustive_oracle(world, topo, ch, traffic, reward_mode)[0]
    return resolve_handshake(random_policy(rng, topo), topo)
