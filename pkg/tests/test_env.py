import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcomp.env import channel as chn
from fedcomp.env.batch import BatchEnv
from fedcomp.env.channel import ChannelConfig, compute_sinr, effective_radius, effective_region
from fedcomp.env.core import (
    CompEnv,
    WorldState,
    attribution,
    decompose_reward,
    initial_world,
    serve,
    step,
)
from fedcomp.env.handshake import ClusterAssignment, JointAction, mutual_links, resolve_handshake
from fedcomp.env.observation import ObservationConfig, compact_counts, neighbor_grid, observe, user_grid
from fedcomp.env.topology import (
    TopologyConfig,
    action_slot_map,
    build_topology,
    canonical_actions,
    direction_slot,
    enumerate_actions,
    patch_topology,
)
from fedcomp.env.traffic import TrafficConfig, Users, sample_users
from fedcomp.errors import ConfigError


def random_joint(rng, env):
    return JointAction(tuple(acts[int(rng.integers(len(acts)))] for acts in env.actions))


def partition_oracle(requests, n, cap):
    """Independent cluster formation: explicit set merging over sorted mutual links."""
    links = sorted((i, j) for i in range(n) for j in requests[i] if i < j and i in requests[j])
    groups = [{i} for i in range(n)]
    for i, j in links:
        gi = next(g for g in groups if i in g)
        gj = next(g for g in groups if j in g)
        if gi is gj or len(gi) + len(gj) > cap:
            continue
        groups.remove(gj)
        gi |= gj
    return sorted(sorted(g) for g in groups)


class TestTopology:
    def test_grid_has_twenty_aps(self, env):
        assert env.n_aps == 20
        assert env.topo.positions.shape == (20, 2)

    def test_neighbor_relation_is_symmetric_and_irreflexive(self, env):
        for i, nbrs in enumerate(env.topo.neighbors):
            assert i not in nbrs
            for j in nbrs:
                assert i in env.topo.neighbors[j]

    def test_interior_aps_have_six_neighbors(self, env):
        counts = [len(n) for n in env.topo.neighbors]
        assert max(counts) == 6
        assert min(counts) >= 2

    def test_neighbors_are_near_equidistant(self, env):
        pos = env.topo.positions
        d = [np.linalg.norm(pos[i] - pos[j]) for i, n in enumerate(env.topo.neighbors) for j in n]
        assert max(d) / min(d) < 1.05

    def test_action_zero_is_noop_and_requests_are_neighbors(self, env):
        for ap, acts in enumerate(env.actions):
            assert acts[0] == ()
            assert len(set(acts)) == len(acts)
            for a in acts[1:]:
                assert set(a) <= set(env.topo.neighbors[ap])
                assert len(a) <= env.topo.config.max_cluster_size - 1

    def test_pairs_are_adjacent_neighbors(self, env):
        for acts in env.actions:
            for a in acts:
                if len(a) == 2:
                    assert env.topo.are_neighbors(*a)

    def test_all_pairs_restriction_allows_more(self):
        topo = build_topology(TopologyConfig(pair_restriction="all_pairs"), ChannelConfig())
        ap = max(range(topo.n_aps), key=lambda i: len(topo.neighbors[i]))
        assert len(enumerate_actions(topo, ap)) == 1 + 6 + 15

    def test_interior_action_count(self, env):
        ap = max(range(env.n_aps), key=lambda i: len(env.topo.neighbors[i]))
        assert len(env.actions[ap]) == 1 + 6 + 6

    def test_slot_maps_are_injective_into_canonical(self, env):
        k = len(canonical_actions(env.topo.config))
        assert k == 13
        for ap in range(env.n_aps):
            m = action_slot_map(env.topo, ap)
            assert len(set(m.tolist())) == len(m)
            assert m[0] == 0 and m.max() < k

    def test_direction_slots_of_an_interior_ap_are_distinct(self, env):
        ap = max(range(env.n_aps), key=lambda i: len(env.topo.neighbors[i]))
        slots = {direction_slot(env.topo, ap, j) for j in env.topo.neighbors[ap]}
        assert slots == set(range(6))

    def test_patch_is_center_plus_ring(self, env):
        ap = max(range(env.n_aps), key=lambda i: len(env.topo.neighbors[i]))
        patch = patch_topology(env.topo, ap)
        assert patch.n_aps == 7
        center = sorted((ap,) + env.topo.neighbors[ap]).index(ap)
        assert len(patch.neighbors[center]) == 6

    @pytest.mark.parametrize(
        "kwargs",
        [dict(rows=0), dict(max_cluster_size=0), dict(spacing_x=-1.0), dict(pair_restriction="any")],
    )
    def test_invalid_config_raises(self, kwargs):
        with pytest.raises(ConfigError):
            TopologyConfig(**kwargs)


class TestChannel:
    def test_sinr_matches_hand_computation(self):
        ch = ChannelConfig(tx_power=2.0, pathloss_exponent=3.0, noise_power=1e-6)
        aps = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
        user = (10.0, 0.0)
        p = [2.0 * math.hypot(user[0] - x, user[1] - y) ** -3.0 for x, y in aps]
        # strongest AP is 0, clustered with AP 1
        expected = (p[0] + p[1]) / (p[2] + 1e-6)
        got = compute_sinr(user, np.array([0, 0, 1]), aps, ch)
        assert got == pytest.approx(expected, rel=1e-13)

    def test_singleton_sinr_treats_all_others_as_interference(self):
        ch = ChannelConfig()
        aps = np.array([[0.0, 0.0], [50.0, 0.0]])
        user = (20.0, 0.0)
        p0, p1 = (ch.tx_power * d ** -ch.pathloss_exponent for d in (20.0, 30.0))
        assert compute_sinr(user, np.array([0, 1]), aps, ch) == pytest.approx(p0 / (p1 + ch.noise_power), rel=1e-13)

    def test_fading_draw_scales_powers(self):
        ch = ChannelConfig()
        aps = np.array([[0.0, 0.0], [50.0, 0.0]])
        base = compute_sinr((20.0, 0.0), np.array([0, 1]), aps, ch)
        faded = compute_sinr((20.0, 0.0), np.array([0, 1]), aps, ch, np.array([2.0, 1.0]))
        p0, p1 = (ch.tx_power * d ** -ch.pathloss_exponent for d in (20.0, 30.0))
        assert faded == pytest.approx(2 * p0 / (p1 + ch.noise_power), rel=1e-13)
        assert faded > base

    def test_rayleigh_power_fading_has_unit_mean(self, rng):
        draws = chn.draw_fading(rng, (200_000,), ChannelConfig(fading="rayleigh"))
        # exponential(1): mean 1, standard error 1 / sqrt(n)
        assert abs(draws.mean() - 1.0) < 5 / math.sqrt(len(draws))

    def test_distances_are_clamped(self):
        d = chn.distances(np.zeros((1, 2)), np.zeros((1, 2)))
        assert d[0, 0] == chn.MIN_DISTANCE

    def test_effective_radius_solves_threshold(self):
        ch = ChannelConfig()
        r = effective_radius(5.5e-6, ch)
        assert ch.tx_power * r ** -ch.pathloss_exponent == pytest.approx(5.5e-6, rel=1e-12)

    def test_effective_region_membership(self, env):
        region = effective_region(env.topo, env.ch, 0)
        c = np.asarray(region.center)
        inside = c + [0.99 * region.radius, 0.0]
        outside = c + [1.01 * region.radius, 0.0]
        assert region(np.array([inside, outside])).tolist() == [True, False]

    def test_unreachable_threshold_gives_empty_region(self):
        assert effective_radius(1e9, ChannelConfig()) == 0.0

    @pytest.mark.parametrize("kwargs", [dict(tx_power=0.0), dict(pathloss_exponent=1.5), dict(fading="nakagami")])
    def test_invalid_config_raises(self, kwargs):
        with pytest.raises(ConfigError):
            ChannelConfig(**kwargs)


class TestTraffic:
    area = (0.0, 0.0, 200.0, 150.0)

    def test_counts_and_fields(self, rng):
        u = sample_users(rng, self.area, 100, 5, 20.0, demand=3.0)
        assert len(u) == 100
        assert np.all(u.demand == 3.0) and np.all(u.age == 0)
        assert set(np.unique(u.parent)) <= set(range(5))

    def test_users_stay_in_area_and_near_parent(self, rng):
        u = sample_users(rng, self.area, 5000, 8, 30.0)
        assert np.all(u.pos >= [0.0, 0.0]) and np.all(u.pos <= [200.0, 150.0])
        assert np.all(np.linalg.norm(u.pos - u.parent_pos, axis=1) <= 30.0 + 1e-9)

    def test_uniform_disc_radial_law(self, rng):
        # far from the border no clipping happens: P(r <= R/2) = 1/4 for a uniform disc
        u = sample_users(rng, (-1e6, -1e6, 1e6, 1e6), 40_000, 1, 10.0)
        r = np.linalg.norm(u.pos - u.parent_pos, axis=1)
        frac = np.mean(r <= 5.0)
        assert abs(frac - 0.25) < 5 * math.sqrt(0.25 * 0.75 / len(r))

    def test_parent_choice_is_uniform(self, rng):
        u = sample_users(rng, self.area, 60_000, 4, 10.0)
        freq = np.bincount(u.parent, minlength=4) / len(u)
        assert np.all(np.abs(freq - 0.25) < 5 * math.sqrt(0.25 * 0.75 / len(u)))

    def test_empty_population(self, rng):
        assert len(sample_users(rng, self.area, 0, 0, 10.0)) == 0

    def test_user_records(self, rng):
        u = sample_users(rng, self.area, 3, 2, 10.0)
        recs = list(u)
        assert len(recs) == 3 and recs[0].age == 0

    @pytest.mark.parametrize(
        "kwargs", [dict(n_users=-1), dict(n_clusters=0), dict(lifetime=0), dict(cell_edge_ratio=0.0), dict(area=(5, 5, 0, 0))]
    )
    def test_invalid_config_raises(self, kwargs):
        with pytest.raises(ConfigError):
            TrafficConfig(**kwargs)


class TestHandshake:
    def test_no_requests_gives_singletons(self, env):
        a = resolve_handshake(JointAction.noop(env.n_aps), env.topo)
        assert a.same_partition(ClusterAssignment.singletons(env.n_aps))

    def test_one_sided_request_forms_nothing(self, env):
        i = 0
        j = env.topo.neighbors[0][0]
        req = [()] * env.n_aps
        req[i] = (j,)
        assert resolve_handshake(JointAction(tuple(req)), env.topo).links == ()

    def test_mutual_request_forms_pair(self, env):
        i, j = 0, env.topo.neighbors[0][0]
        req = [()] * env.n_aps
        req[i], req[j] = (j,), (i,)
        a = resolve_handshake(JointAction(tuple(req)), env.topo)
        assert a.cluster_of[i] == a.cluster_of[j]
        assert a.links == ((min(i, j), max(i, j)),)

    def test_exhaustive_small_grid_matches_oracle(self):
        topo = build_topology(TopologyConfig(rows=2, cols=2), ChannelConfig())
        actions = [enumerate_actions(topo, ap) for ap in range(topo.n_aps)]
        n = 0
        for combo in itertools.product(*actions):
            a = resolve_handshake(JointAction(combo), topo)
            assert sorted(a.clusters) == partition_oracle(combo, topo.n_aps, 3)
            n += 1
        assert n == int(np.prod([len(x) for x in actions]))

    def test_cap_drops_the_link_that_would_overflow(self):
        topo = build_topology(TopologyConfig(rows=4, cols=1), ChannelConfig())
        assert topo.neighbors == ((1,), (0, 2), (1, 3), (2,))
        a = resolve_handshake(JointAction(((1,), (0, 2), (1, 3), (2,))), topo)
        assert a.clusters == [[0, 1, 2], [3]]
        assert a.links == ((0, 1), (1, 2))

    def test_random_joint_actions_match_oracle(self, env, rng):
        for _ in range(300):
            joint = random_joint(rng, env)
            a = resolve_handshake(joint, env.topo)
            assert sorted(a.clusters) == partition_oracle(joint.requests, env.n_aps, 3)

    def test_links_are_mutual_and_sizes_capped(self, env, rng):
        for _ in range(300):
            joint = random_joint(rng, env)
            a = resolve_handshake(joint, env.topo)
            assert a.sizes().max() <= 3
            for i, j in a.links:
                assert j in joint.requests[i] and i in joint.requests[j]
                assert a.cluster_of[i] == a.cluster_of[j]

    def test_mutual_links_sorted(self):
        assert mutual_links([(1, 2), (0,), (0,)]) == [(0, 1), (0, 2)]

    def test_validated_rejects_bad_requests(self, env):
        far = next(j for j in range(env.n_aps) if j not in env.topo.neighbors[0] and j != 0)
        with pytest.raises(ValueError):
            JointAction.validated([(far,)] + [()] * 19, env.topo)
        with pytest.raises(ValueError):
            JointAction.validated([()] * 3, env.topo)

    def test_cluster_ids_follow_smallest_member(self):
        a = ClusterAssignment.from_clusters([[3, 1], [0], [2]], 4)
        assert a.cluster_of.tolist() == [0, 1, 2, 1]
        assert a.clusters == [[0], [1, 3], [2]]


class TestRewards:
    def test_decomposition_sums_to_global(self, env, rng):
        for seed in range(50):
            world = initial_world(env.topo, env.traffic, np.random.default_rng(seed))
            world.assignment = resolve_handshake(random_joint(rng, env), env.topo)
            total, per_ap = decompose_reward(world, env.topo, env.ch, env.traffic)
            assert abs(per_ap.sum() - total) <= 1e-9 * abs(total)

    def test_decomposition_in_served_demand_mode(self, env, rng):
        world = initial_world(env.topo, env.traffic, rng)
        total, per_ap = decompose_reward(world, env.topo, env.ch, env.traffic, "served_demand")
        assert abs(per_ap.sum() - total) <= 1e-9 * abs(total)

    def test_orphan_user_is_credited_to_nearest_ap(self, env):
        far = np.array([[env.topo.positions[:, 0].max() + 500.0, 0.0]])
        dist = chn.distances(far, env.topo.positions)
        cover, weight = attribution(dist, env.topo, env.ch)
        assert cover.sum() == 1 and cover[0, np.argmin(dist[0])]
        assert weight[0] == 1.0

    def test_overlap_user_split_evenly(self, env):
        mid = env.topo.positions[[0, env.topo.neighbors[0][0]]].mean(axis=0, keepdims=True)
        dist = chn.distances(mid, env.topo.positions)
        cover, weight = attribution(dist, env.topo, env.ch)
        assert weight[0] == pytest.approx(1.0 / cover[0].sum())

    def test_cell_edge_mode_ignores_center_users(self, env):
        center = env.topo.positions[5:6] + 1.0
        users = Users(center, np.ones(1), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), center)
        out = serve(users, ClusterAssignment.singletons(20), env.topo, env.ch, env.traffic, "cell_edge_sum_rate")
        assert out.rate[0] > 0 and out.qos[0] == 0.0

    def test_cooperation_raises_edge_user_rate(self, env):
        i, j = 0, env.topo.neighbors[0][0]
        mid = env.topo.positions[[i, j]].mean(axis=0, keepdims=True)
        users = Users(mid, np.ones(1), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64), mid)
        alone = serve(users, ClusterAssignment.singletons(20), env.topo, env.ch, env.traffic, "cell_edge_sum_rate")
        clusters = [[i, j]] + [[k] for k in range(20) if k not in (i, j)]
        joint = serve(
            users, ClusterAssignment.from_clusters(clusters, 20), env.topo, env.ch, env.traffic, "cell_edge_sum_rate"
        )
        assert joint.rate[0] > alone.rate[0]

    def test_unknown_reward_mode(self, env, rng):
        world = initial_world(env.topo, env.traffic, rng)
        with pytest.raises(ConfigError):
            serve(world.users, world.assignment, env.topo, env.ch, env.traffic, "throughput")


class TestStep:
    def test_replay_is_bitwise_identical(self, env):
        a = b = None
        for _ in range(2):
            rng = np.random.default_rng(7)
            world = env.reset(rng)
            acts = np.random.default_rng(8)
            rewards = []
            for _ in range(20):
                idx = (acts.random(env.n_aps) * env.n_actions).astype(int)
                world, per_ap, g = env.step(world, idx)
                rewards.append((g, per_ap.copy()))
            a, b = b, (world.users.pos.copy(), rewards)
        assert np.array_equal(a[0], b[0])
        for (g1, p1), (g2, p2) in zip(a[1], b[1]):
            assert g1 == g2 and np.array_equal(p1, p2)

    def test_population_is_replenished(self, env, rng):
        world = env.reset(rng)
        for _ in range(10):
            world, _, _ = env.step(world, np.zeros(env.n_aps, dtype=int))
            assert len(world.users) == env.traffic.n_users
            assert np.all(world.users.age < env.traffic.lifetime)

    def test_step_does_not_mutate_input(self, env, rng):
        world = env.reset(rng)
        pos = world.users.pos.copy()
        env.step(world, np.zeros(env.n_aps, dtype=int))
        assert np.array_equal(world.users.pos, pos)

    def test_demand_shrinks_by_delivered_amount(self, env):
        traffic = TrafficConfig(lifetime=10, demand=1e6)
        e = CompEnv(traffic=traffic)
        world = e.reset(np.random.default_rng(3))
        before = world.users.demand.copy()
        out = serve(world.users, ClusterAssignment.singletons(20), e.topo, e.ch, traffic, "served_demand")
        nxt, _, _ = e.step(world, np.zeros(20, dtype=int))
        np.testing.assert_allclose(nxt.users.demand, before - out.rate * traffic.slot_budget)
        assert np.all(nxt.users.age == 1)

    def test_step_records_assignment(self, env, rng):
        world = env.reset(rng)
        joint = random_joint(rng, env)
        nxt, _, _ = step(world, joint, env.topo, env.ch, env.traffic)
        assert nxt.assignment.same_partition(resolve_handshake(joint, env.topo))
        assert nxt.t == world.t + 1


class TestObservation:
    def test_compact_counts_match_brute_force(self, env, rng):
        cfg = ObservationConfig()
        world = env.reset(rng)
        got = env.compact(world)
        radius = env.topo.effective_radius
        want = np.zeros_like(got)
        for ap, (cx, cy) in enumerate(env.topo.positions):
            for x, y in world.users.pos:
                d = max(math.hypot(x - cx, y - cy), chn.MIN_DISTANCE)
                if d > radius:
                    continue
                ang = math.atan2(y - cy, x - cx) % (2 * math.pi)
                sector = min(int(ang / (2 * math.pi) * cfg.n_sectors), cfg.n_sectors - 1)
                ring = int(d >= cfg.ring_split * radius)
                want[ap, ring * cfg.n_sectors + sector] += 1
        np.testing.assert_array_equal(got, want)

    def test_compact_without_cached_distances(self, env, rng):
        world = env.reset(rng)
        a = compact_counts(world.users.pos, env.topo.positions, env.topo.effective_radius, ObservationConfig())
        np.testing.assert_array_equal(a, env.compact(world))

    def test_observation_is_local(self, env, rng):
        world = env.reset(rng)
        ap = 5
        obs = observe(world, ap, env.topo, env.obs_cfg)
        far = np.linalg.norm(world.users.pos - env.topo.positions[ap], axis=1) > 2 * env.topo.effective_radius
        moved = world.users.copy()
        moved.pos[far] += 1000.0
        other = WorldState(world.t, moved, world.assignment, world.rng)
        obs2 = observe(other, ap, env.topo, env.obs_cfg)
        np.testing.assert_array_equal(obs.grid, obs2.grid)
        np.testing.assert_array_equal(obs.compact, obs2.compact)

    def test_grids_shape_and_range(self, env, rng):
        g = env.grids(env.reset(rng))
        assert g.shape == (20, 8 * 8 * 2)
        assert g.min() >= 0.0 and g.max() <= 1.0

    def test_user_grid_normalized(self):
        img = user_grid(np.array([[0.5, 0.5], [0.5, 0.5], [-0.5, -0.5]]), np.zeros(2), 1.0, 2)
        assert img.max() == 1.0 and img.sum() == 1.5

    def test_far_neighbor_projected_to_border(self):
        img = neighbor_grid(np.array([[10.0, 0.0]]), np.zeros(2), 1.0, 4)
        assert img[3].sum() == 1.0

    @pytest.mark.parametrize("kwargs", [dict(grid_size=0), dict(ring_split=1.0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            ObservationConfig(**kwargs)


class TestBatchEnv:
    @pytest.mark.parametrize("fading", ["unit", "rayleigh"])
    @pytest.mark.parametrize("lifetime", [2, 5])
    def test_each_world_matches_the_single_step(self, fading, lifetime):
        env = CompEnv(channel=ChannelConfig(fading=fading), traffic=TrafficConfig(lifetime=lifetime, demand=2.0))
        benv = BatchEnv(env)
        batch = benv.reset([np.random.default_rng(s) for s in range(3)])
        worlds = [initial_world(env.topo, env.traffic, np.random.default_rng(s)) for s in range(3)]
        acts = np.random.default_rng(11)
        for _ in range(40):
            idx = [(acts.random(20) * env.n_actions).astype(int) for _ in range(3)]
            batch, per_ap, glob = benv.step(batch, idx)
            counts = benv.compact(batch)
            for r in range(3):
                worlds[r], p1, g1 = env.step(worlds[r], idx[r])
                assert glob[r] == g1
                np.testing.assert_array_equal(per_ap[r], p1)
                np.testing.assert_array_equal(batch.pos[r], worlds[r].users.pos)
                np.testing.assert_array_equal(counts[r], env.compact(worlds[r]))

    def test_world_view(self, env):
        benv = BatchEnv(env)
        batch = benv.reset([np.random.default_rng(1)])
        w = batch.world(0)
        assert len(w.users) == env.traffic.n_users
        np.testing.assert_array_equal(w.dist, chn.distances(w.users.pos, env.topo.positions))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(["cell_edge_sum_rate", "served_demand"]))
def test_decomposition_property(seed, mode):
    env = CompEnv(reward_mode=mode)
    rng = np.random.default_rng(seed)
    world = env.reset(rng)
    world.assignment = resolve_handshake(random_joint(rng, env), env.topo)
    total, per_ap = decompose_reward(world, env.topo, env.ch, env.traffic, mode)
    assert abs(per_ap.sum() - total) <= 1e-9 * max(abs(total), 1e-300)
    assert np.all(per_ap >= 0)
