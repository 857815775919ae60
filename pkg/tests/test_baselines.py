import itertools

import numpy as np
import pytest

from fedcomp import baselines as bl
from fedcomp.env.core import CompEnv
from fedcomp.env.handshake import ClusterAssignment, resolve_handshake
from fedcomp.env.topology import patch_topology
from fedcomp.env.traffic import TrafficConfig
from fedcomp.errors import ConfigError


def interior(env):
    return max(range(env.n_aps), key=lambda i: len(env.topo.neighbors[i]))


class TestPartitions:
    @pytest.mark.parametrize("n,bell", [(0, 1), (1, 1), (3, 5), (5, 52), (7, 877)])
    def test_counts_are_bell_numbers(self, n, bell):
        assert sum(1 for _ in bl.set_partitions(range(n))) == bell

    def test_partitions_are_distinct_and_complete(self):
        seen = set()
        for part in bl.set_partitions(range(4)):
            assert sorted(x for block in part for x in block) == [0, 1, 2, 3]
            seen.add(frozenset(frozenset(b) for b in part))
        assert len(seen) == 15


class TestReachability:
    def test_pairs_reachable_iff_neighbors(self, env):
        for i, j in itertools.combinations(range(env.n_aps), 2):
            assert bl.block_reachable(env.topo, [i, j]) == env.topo.are_neighbors(i, j)

    def test_triples_reachable_iff_triangle(self, env):
        topo = env.topo
        for tri in itertools.combinations(range(env.n_aps), 3):
            triangle = all(topo.are_neighbors(a, b) for a, b in itertools.combinations(tri, 2))
            assert bl.block_reachable(topo, tri) == triangle

    def test_size_cap(self, env):
        ap = interior(env)
        assert not bl.block_reachable(env.topo, (ap,) + env.topo.neighbors[ap][:3])

    def test_joint_action_reproduces_the_assignment(self, env):
        a = bl.fixed_scheme(env.topo)
        joint = bl.joint_action_for(a, env.topo)
        assert joint is not None
        assert resolve_handshake(joint, env.topo).same_partition(a)

    def test_unreachable_assignment(self, env):
        far = next(j for j in range(1, env.n_aps) if not env.topo.are_neighbors(0, j))
        clusters = [[0, far]] + [[k] for k in range(env.n_aps) if k not in (0, far)]
        assert bl.joint_action_for(ClusterAssignment.from_clusters(clusters, env.n_aps), env.topo) is None


class TestPolicies:
    def test_fixed_scheme_is_a_capped_partition(self, env):
        a = bl.fixed_scheme(env.topo)
        assert sorted(x for c in a.clusters for x in c) == list(range(env.n_aps))
        assert a.sizes().max() <= 3
        assert all(bl.block_reachable(env.topo, c) for c in a.clusters)

    def test_greedy_never_loses_to_singletons(self, env, rng):
        for _ in range(3):
            world = env.reset(rng)
            a = bl.greedy_clustering(world, env.topo, env.ch, env.traffic)
            assert env.global_reward(world, a) >= env.global_reward(world, ClusterAssignment.singletons(20))
            assert all(bl.block_reachable(env.topo, c) for c in a.clusters)

    def test_oracle_dominates_on_a_patch(self, env, rng):
        patch = patch_topology(env.topo, interior(env))
        penv = CompEnv(traffic=TrafficConfig(n_users=56, n_clusters=4), topo=patch)
        world = penv.reset(rng)
        best, value = bl.exhaustive_oracle(world, patch, penv.ch, penv.traffic)
        greedy = penv.global_reward(world, bl.greedy_clustering(world, patch, penv.ch, penv.traffic))
        single = penv.global_reward(world, ClusterAssignment.singletons(7))
        assert value == penv.global_reward(world, best)
        assert value >= greedy >= single

    def test_oracle_refuses_large_topologies(self, env, rng):
        with pytest.raises(ConfigError):
            bl.exhaustive_oracle(env.reset(rng), env.topo, env.ch)

    def test_candidates_are_reachable_and_unique(self, env):
        cands = bl.candidate_partitions(patch_topology(env.topo, interior(env)))
        keys = [tuple(c.cluster_of.tolist()) for c in cands]
        assert len(keys) == len(set(keys)) and keys == sorted(keys)

    def test_random_policy_uses_each_action_list(self, env):
        rng = np.random.default_rng(5)
        joint = bl.random_policy(rng, env.topo, env.actions)
        for ap, req in enumerate(joint.requests):
            assert req in env.actions[ap]

    def test_baseline_dispatch(self, env, rng):
        world = env.reset(rng)
        for kind in ("fixed", "greedy", "random"):
            a = bl.baseline_assignment(kind, world, env.topo, env.ch, env.traffic, env.reward_mode, rng=rng)
            assert len(a.cluster_of) == env.n_aps
        with pytest.raises(ConfigError):
            bl.baseline_assignment("optimal", world, env.topo, env.ch, env.traffic, env.reward_mode)
