import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedcomp.errors import ConfigError
from fedcomp.federation.aggregate import (
    FederationConfig,
    SyncLog,
    fed_average,
    should_sync,
    snapshot,
    sync,
)
from fedcomp.federation.coral import (
    ObservationWindow,
    coral_grad,
    coral_loss,
    coral_theta_grad,
    covariance,
    personalized_actor_update,
)
from fedcomp.marl.approximators import Approximator
from fedcomp.marl.learner import AgentLearner, LearnerConfig, Transition, actor_update, create_learner

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def population(rng, n=4, baseline=False):
    approx = Approximator.linear(3, 2)
    base = Approximator.linear(3, 1) if baseline else None
    learner = create_learner(approx, approx, rng, n_agents=n, baseline=base)
    return AgentLearner(
        approx,
        approx,
        rng.standard_normal(learner.theta.shape),
        rng.standard_normal(learner.omega.shape),
        rng.standard_normal(n),
        base,
        None if base is None else rng.standard_normal((n, 3)),
    )


class TestFedAverage:
    def test_mean_of_two(self):
        np.testing.assert_array_equal(fed_average([np.array([1.0, 2.0]), np.array([3.0, 6.0])]), [2.0, 4.0])

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (5,), elements=finite), st.integers(1, 9))
    def test_identical_inputs_are_a_fixed_point(self, p, n):
        out = fed_average([p] * n)
        assert out.tobytes() == p.tobytes()

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (6, 4), elements=finite))
    def test_result_lies_in_the_componentwise_hull(self, stack):
        out = fed_average(stack)
        assert np.all(out >= stack.min(axis=0)) and np.all(out <= stack.max(axis=0))

    def test_order_is_fixed_by_agent_id(self, rng):
        stack = rng.standard_normal((7, 50)) * 10.0 ** rng.integers(-8, 8, (7, 50))
        total = np.zeros(50)
        for row in stack:
            total = total + row
        np.testing.assert_array_equal(fed_average(stack), np.clip(total / 7, stack.min(0), stack.max(0)))

    def test_list_and_stack_agree(self, rng):
        stack = rng.standard_normal((3, 4, 2))
        np.testing.assert_array_equal(fed_average(stack), fed_average(list(stack)))

    @pytest.mark.parametrize("bad", [[], np.zeros((0, 3))])
    def test_empty_raises(self, bad):
        with pytest.raises(ValueError):
            fed_average(bad)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            fed_average([np.zeros(2), np.zeros(3)])


class TestSync:
    @pytest.mark.parametrize("t,fires", [(40, True), (41, False), (0, False), (20, True)])
    def test_schedule(self, t, fires):
        assert should_sync(FederationConfig(period_F=20), t) is fires

    def test_mode_none_is_inert(self, rng):
        learner = population(rng)
        out, g, event = sync(learner, FederationConfig(mode="none"), 20)
        assert out is learner and g is None and event is None
        assert not should_sync(FederationConfig(mode="none", period_F=1), 5)

    def test_full_average_gives_consensus(self, rng):
        learner = population(rng, baseline=True)
        out, g, event = sync(learner, FederationConfig(period_F=5), 10)
        for name in ("theta", "omega", "delta"):
            arr = getattr(out, name)
            assert np.all(arr == arr[0])
            np.testing.assert_allclose(arr[0], getattr(learner, name).mean(axis=0), rtol=1e-14)
        assert np.all(out.r_hat == g.r_hat)
        assert event.step == 10 and event.mode == "fedavg_full"

    def test_consensus_agents_agree_on_shared_inputs(self, rng):
        out, _, _ = sync(population(rng), FederationConfig(period_F=1), 1)
        x = rng.standard_normal(3)
        q = [out.critic.forward(out.omega[a], x) for a in range(out.n_agents)]
        assert all(np.array_equal(q[0], v) for v in q)

    def test_critic_only_keeps_actors(self, rng):
        learner = population(rng, baseline=True)
        out, _, _ = sync(learner, FederationConfig(mode="fedavg_critic_only"), 20)
        assert np.max(np.abs(out.theta - learner.theta)) == 0
        assert np.all(out.omega == out.omega[0]) and np.all(out.delta == out.delta[0])
        assert np.all(out.r_hat == out.r_hat[0])

    def test_personalized_refreshes_only_the_global_model(self, rng):
        learner = population(rng)
        out, g, event = sync(learner, FederationConfig(mode="coral_personalized"), 20)
        assert out is learner and event is not None
        np.testing.assert_array_equal(g.theta, fed_average(learner.theta))

    def test_personalized_can_average_the_critic(self, rng):
        learner = population(rng)
        cfg = FederationConfig(mode="coral_personalized", coral_average_critic=True)
        out, _, _ = sync(learner, cfg, 20)
        np.testing.assert_array_equal(out.theta, learner.theta)
        assert np.all(out.omega == out.omega[0])

    def test_single_agent_learner_rejected(self, rng):
        approx = Approximator.linear(2, 2)
        with pytest.raises(ValueError):
            sync(create_learner(approx, approx, rng), FederationConfig(), 20)

    def test_snapshot_and_log(self, rng):
        learner = population(rng)
        g = snapshot(learner, 7)
        assert g.step == 7 and g.theta.shape == learner.theta.shape[1:]
        log = SyncLog()
        for t in range(1, 61):
            log.record(sync(learner, FederationConfig(period_F=20), t)[2])
        assert log.steps() == [20, 40, 60]

    @pytest.mark.parametrize(
        "kwargs", [dict(period_F=0), dict(mode="gossip"), dict(coral_weight=-1.0), dict(coral_window=1)]
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            FederationConfig(**kwargs)


class TestCoral:
    def test_covariance_matches_numpy(self, rng):
        x = rng.standard_normal((30, 4))
        np.testing.assert_allclose(covariance(x), np.cov(x, rowvar=False), rtol=1e-12)

    def test_zero_on_identical_inputs(self, rng):
        x = rng.standard_normal((16, 5))
        assert coral_loss(x, x) == 0.0
        assert not coral_grad(x, x).any()

    def test_scaled_features_oracle(self, rng):
        x = rng.standard_normal((20, 3))
        c = np.cov(x, rowvar=False)
        # doubling the features quadruples the covariance
        assert coral_loss(2 * x, x) == pytest.approx(9 * np.sum(c * c) / (4 * 9), rel=1e-12)

    def test_translation_invariant(self, rng):
        x = rng.standard_normal((10, 3))
        y = rng.standard_normal((10, 3))
        assert coral_loss(x + 5.0, y) == pytest.approx(coral_loss(x, y), rel=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (6, 3), elements=st.floats(-100, 100)), arrays(np.float64, (6, 3), elements=st.floats(-100, 100)))
    def test_never_negative(self, x, y):
        assert coral_loss(x, y) >= 0.0

    def test_gradient_by_finite_differences(self, rng):
        x = rng.standard_normal((8, 3))
        y = rng.standard_normal((8, 3))
        g = coral_grad(x, y)
        h = 1e-6
        num = np.empty_like(x)
        for idx in np.ndindex(x.shape):
            e = np.zeros_like(x)
            e[idx] = h
            num[idx] = (coral_loss(x + e, y) - coral_loss(x - e, y)) / (2 * h)
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-10)

    def test_batched_leading_axis(self, rng):
        x = rng.standard_normal((3, 8, 2))
        y = rng.standard_normal((3, 8, 2))
        np.testing.assert_allclose(coral_loss(x, y), [coral_loss(x[a], y[a]) for a in range(3)], rtol=1e-14)

    @pytest.mark.parametrize("shapes", [((1, 3), (5, 3)), ((5, 3), (5, 2))])
    def test_shape_errors(self, shapes):
        with pytest.raises(ValueError):
            coral_loss(np.zeros(shapes[0]), np.zeros(shapes[1]))

    def test_theta_gradient_by_finite_differences(self, rng):
        approx = Approximator.mlp(4, 3, (5,))
        theta = approx.init(rng) + 0.1 * rng.standard_normal(approx.n_params)
        g_theta = approx.init(rng)
        batch = rng.standard_normal((12, 4))
        learner = AgentLearner(approx, approx, theta, np.zeros(approx.n_params), np.asarray(0.0))
        from fedcomp.federation.aggregate import GlobalModel

        gm = GlobalModel(g_theta, np.zeros(approx.n_params), 0.0)
        grad = coral_theta_grad(learner, gm, batch)

        def loss(t):
            return coral_loss(approx.features(t, batch), approx.features(g_theta, batch))

        h = 1e-6
        num = np.array([(loss(theta + h * e) - loss(theta - h * e)) / (2 * h) for e in np.eye(approx.n_params)])
        np.testing.assert_allclose(grad, num, rtol=1e-4, atol=1e-9)

    def test_window_keeps_the_latest_rows(self):
        w = ObservationWindow(2, 1, size=3)
        assert w.batch() is None
        for k in range(5):
            w.push(np.full((2, 1), float(k)))
        assert sorted(w.batch()[0, :, 0].tolist()) == [2.0, 3.0, 4.0]
        with pytest.raises(ConfigError):
            ObservationWindow(1, 1, size=1)

    def test_personalized_update_without_weight_is_plain_actor_step(self, rng):
        learner = population(rng)
        tr = Transition(rng.standard_normal((4, 3)), np.array([0, 1, 0, 1]), np.ones(4), rng.standard_normal((4, 3)), np.zeros(4, dtype=int))
        cfg = LearnerConfig(alpha_theta=0.1)
        g = snapshot(learner, 0)
        out = personalized_actor_update(learner, tr, cfg, g, 0.0, None)
        np.testing.assert_array_equal(out.theta, actor_update(learner, tr, cfg).theta)
        with pytest.raises(ValueError):
            personalized_actor_update(learner, tr, cfg, None, 1.0, None)
