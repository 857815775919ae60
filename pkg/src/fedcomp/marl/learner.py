"""Actor-critic updates for the episodic and average-reward settings.

All update functions are pure: they return a new :class:`AgentLearner` and
leave their input untouched. A learner may hold one agent (parameter
vectors of shape ``(P,)``, scalar ``r_hat``) or a stacked population
(``(A, P)`` and ``(A,)``); transitions then carry a leading agent axis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from fedcomp.errors import ConfigError, NumericalStateError
from fedcomp.marl.approximators import Approximator
from fedcomp.marl.schedules import Schedule

MODES = ("episodic", "average_reward")
CRITIC_INPUTS = ("self_only", "with_neighbor_actions")


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    alpha_theta: Schedule = Schedule(1e-3)
    alpha_omega: Schedule = Schedule(1e-2)
    alpha_r: Schedule = Schedule(1e-3)
    mode: str = "average_reward"
    critic_input: str = "self_only"
    use_baseline: bool = False
    strict_actor_target: bool = False  # weight the score by Q(S_{t+1}, A_{t+1}) instead of Q(S_t, A_t)

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.critic_input not in CRITIC_INPUTS:
            raise ConfigError(f"critic_input must be one of {CRITIC_INPUTS}")
        for name in ("alpha_theta", "alpha_omega", "alpha_r"):
            if not isinstance(getattr(self, name), Schedule):
                object.__setattr__(self, name, Schedule.parse(getattr(self, name)))


@dataclass(frozen=True)
class Transition:
    """One local experience tuple.

    ``obs`` and ``next_obs`` are actor feature vectors. ``neighbor_actions``
    is the encoding appended to the critic input in the
    ``with_neighbor_actions`` mode. ``mask`` marks the actions that exist
    for this agent (all, when omitted). ``probs`` may cache the policy at
    ``obs`` when the caller already evaluated it for sampling.
    """

    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    next_action: np.ndarray
    neighbor_actions: Optional[np.ndarray] = None
    next_neighbor_actions: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None  # pi(.|obs) under the current theta, if already computed
    done: Optional[np.ndarray] = None  # episodic only: no bootstrap from next_obs where true


@dataclass(frozen=True)
class AgentLearner:
    actor: Approximator
    critic: Approximator
    theta: np.ndarray
    omega: np.ndarray
    r_hat: np.ndarray
    baseline: Optional[Approximator] = None
    delta: Optional[np.ndarray] = None
    steps: int = 0

    @property
    def batched(self) -> bool:
        return self.theta.ndim == 2

    @property
    def n_agents(self) -> int:
        return self.theta.shape[0] if self.batched else 1


def create_learner(
    actor: Approximator,
    critic: Approximator,
    rng: np.random.Generator,
    n_agents: int = None,
    baseline: Approximator = None,
) -> AgentLearner:
    """Fresh learner; a population when ``n_agents`` is given.

    Every agent of a population starts from the same draw so that agents
    are interchangeable before learning begins.
    """
    theta = actor.init(rng)
    omega = critic.init(rng)
    delta = baseline.init(rng) if baseline is not None else None
    r_hat = np.zeros(()) if n_agents is None else np.zeros(n_agents)
    if n_agents is not None:
        theta = np.tile(theta, (n_agents, 1))
        omega = np.tile(omega, (n_agents, 1))
        delta = None if delta is None else np.tile(delta, (n_agents, 1))
    return AgentLearner(actor, critic, theta, omega, r_hat, baseline, delta)


# policy --------------------------------------------------------------------


def softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    if not np.isfinite(logits.sum()) and not np.all(np.isfinite(logits)):
        raise NumericalStateError("non-finite logits")
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_probs(
    theta: np.ndarray, obs: np.ndarray, actor: Approximator = None, mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Softmax policy over actions. Without an approximator, ``theta`` is a
    linear (n_in, n_out) weight matrix or a flat vector of one."""
    if actor is None:
        theta = np.asarray(theta, dtype=float)
        obs = np.asarray(obs, dtype=float)
        actor = Approximator.linear(obs.shape[-1], theta.size // obs.shape[-1])
        theta = theta.reshape(actor.n_params)
    return softmax(actor.forward(theta, obs), mask)


def sample_action(rng, probs: np.ndarray) -> int:
    """Inverse-CDF draw from one distribution; ``rng`` may also be a uniform in [0, 1)."""
    u = rng.random() if hasattr(rng, "random") else float(rng)
    return inverse_cdf(np.asarray(probs, dtype=float), np.asarray(u))


def inverse_cdf(probs: np.ndarray, u: np.ndarray):
    """Index of the first cumulative probability exceeding ``u``, row-wise.

    Zero-probability actions are never returned.
    """
    cdf = np.cumsum(probs, axis=-1)
    k = (cdf <= np.asarray(u)[..., None] * cdf[..., -1:]).sum(axis=-1)
    # u * total can round up to total: fall back to the last action with mass
    if np.max(k) >= probs.shape[-1]:
        last = probs.shape[-1] - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)
        k = np.minimum(k, last)
    return int(k) if np.ndim(k) == 0 else k


def log_policy_grad(learner: AgentLearner, obs, action, mask=None) -> np.ndarray:
    """grad_theta log pi(action | obs) = J^T (e_action - pi)."""
    probs = policy_probs(learner.theta, obs, learner.actor, mask)
    g = _one_hot(action, probs.shape[-1]) - probs
    return learner.actor.vjp(learner.theta, obs, g)


def _one_hot(action, n: int) -> np.ndarray:
    action = np.asarray(action)
    if action.ndim == 0:
        out = np.zeros(n)
        out[int(action)] = 1.0
        return out
    out = np.zeros(action.shape + (n,))
    if action.ndim == 1:
        out[np.arange(len(action)), action] = 1.0
    else:
        np.put_along_axis(out, action[..., None], 1.0, axis=-1)
    return out


def _pick(values: np.ndarray, action):
    """values[..., action] with one action per leading row."""
    if np.ndim(action) == 0:
        return values[..., int(action)]
    return values[np.arange(len(values)), action]


# critic --------------------------------------------------------------------


def critic_input(obs: np.ndarray, neighbor_actions: Optional[np.ndarray], cfg: LearnerConfig) -> np.ndarray:
    if cfg.critic_input == "self_only":
        return np.asarray(obs, dtype=float)
    if neighbor_actions is None:
        raise ConfigError("with_neighbor_actions critic needs neighbor actions")
    return np.concatenate([np.asarray(obs, dtype=float), np.asarray(neighbor_actions, dtype=float)], axis=-1)


def critic_value(omega, obs, action, neighbor_actions=None, cfg: LearnerConfig = None, critic: Approximator = None):
    """Q(o, a[, a_-i]): the critic output selected by ``action``.

    In ``self_only`` mode neighbor actions are ignored.
    """
    cfg = cfg or LearnerConfig()
    x = critic_input(obs, neighbor_actions, cfg)
    if critic is None:
        omega = np.asarray(omega, dtype=float)
        critic = Approximator.linear(x.shape[-1], omega.size // x.shape[-1])
        omega = omega.reshape(critic.n_params)
    return _pick(critic.forward(omega, x), action)


def _q(learner: AgentLearner, x, action):
    return _pick(learner.critic.forward(learner.omega, x), action)


def _q_grad(learner: AgentLearner, x, action, scale) -> np.ndarray:
    """scale * grad_omega Q(x, action), per agent."""
    g = _one_hot(action, learner.critic.n_out) * np.asarray(scale, dtype=float)[..., None]
    return learner.critic.vjp(learner.omega, x, g)


def _v(learner: AgentLearner, obs):
    return learner.baseline.forward(learner.delta, obs)[..., 0]


def _td(learner: AgentLearner, tr: Transition, cfg: LearnerConfig):
    """(TD error, Q, Q', critic input at obs)."""
    x = critic_input(tr.obs, tr.neighbor_actions, cfg)
    nbr = tr.next_neighbor_actions if tr.next_neighbor_actions is not None else tr.neighbor_actions
    nx = critic_input(tr.next_obs, nbr, cfg)
    critic, omega = learner.critic, learner.omega
    q = _pick(critic.forward(omega, x), tr.action)
    q_next = _pick(critic.forward(omega, nx), tr.next_action)
    if cfg.mode == "episodic":
        boot = cfg.gamma * q_next if tr.done is None else np.where(tr.done, 0.0, cfg.gamma * q_next)
        return tr.reward + boot - q, q, q_next, x
    return tr.reward - learner.r_hat + q_next - q, q, q_next, x


def td_error(learner: AgentLearner, tr: Transition, cfg: LearnerConfig):
    """Mode-appropriate TD error, Q(obs, action) and Q(next_obs, next_action)."""
    err, q, q_next, _ = _td(learner, tr, cfg)
    return err, q, q_next


def _evolve(learner: AgentLearner, theta=None, omega=None, r_hat=None, delta=None, steps=None) -> AgentLearner:
    """Cheaper dataclasses.replace for the hot loop."""
    return AgentLearner(
        learner.actor,
        learner.critic,
        learner.theta if theta is None else theta,
        learner.omega if omega is None else omega,
        learner.r_hat if r_hat is None else r_hat,
        learner.baseline,
        learner.delta if delta is None else delta,
        learner.steps if steps is None else steps,
    )


def _checked(learner: AgentLearner) -> AgentLearner:
    for name in ("theta", "omega", "r_hat", "delta"):
        v = getattr(learner, name)
        if v is not None and not np.isfinite(np.sum(v)) and not np.all(np.isfinite(v)):
            raise NumericalStateError(f"{name} became non-finite at learner step {learner.steps}")
    return learner


def td_update_episodic(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> AgentLearner:
    """omega += a_w * (r + gamma Q' - Q) * grad Q."""
    if cfg.mode != "episodic":
        raise ConfigError("td_update_episodic requires mode='episodic'")
    err, _, _ = td_error(learner, tr, cfg)
    step = cfg.alpha_omega(learner.steps + 1)
    x = critic_input(tr.obs, tr.neighbor_actions, cfg)
    return replace(learner, omega=learner.omega + _q_grad(learner, x, tr.action, step * err))


def td_update_average(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> AgentLearner:
    """omega += a_w * (r - r_hat + Q' - Q) * grad Q."""
    if cfg.mode != "average_reward":
        raise ConfigError("td_update_average requires mode='average_reward'")
    err, _, _ = td_error(learner, tr, cfg)
    step = cfg.alpha_omega(learner.steps + 1)
    x = critic_input(tr.obs, tr.neighbor_actions, cfg)
    return replace(learner, omega=learner.omega + _q_grad(learner, x, tr.action, step * err))


def avg_reward_update(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> AgentLearner:
    """r_hat += a_r * (r - r_hat + Q' - Q)."""
    if cfg.mode != "average_reward":
        raise ConfigError("avg_reward_update requires mode='average_reward'")
    err, _, _ = td_error(learner, tr, cfg)
    return replace(learner, r_hat=learner.r_hat + cfg.alpha_r(learner.steps + 1) * err)


def baseline_update(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> AgentLearner:
    """State-value head trained by TD toward r - r_hat + V(next) (or r + gamma V(next))."""
    if learner.baseline is None:
        return learner
    v = _v(learner, tr.obs)
    v_next = _v(learner, tr.next_obs)
    r = np.asarray(tr.reward, dtype=float)
    target = r + cfg.gamma * v_next if cfg.mode == "episodic" else r - learner.r_hat + v_next
    step = cfg.alpha_omega(learner.steps + 1)
    g = learner.baseline.vjp(learner.delta, tr.obs, (step * (target - v))[..., None])
    return replace(learner, delta=learner.delta + g)


def actor_signal(learner: AgentLearner, tr: Transition, cfg: LearnerConfig):
    """The scalar weighting the score function: Q, or Q - V with the baseline."""
    if cfg.strict_actor_target:
        nbr = tr.next_neighbor_actions if tr.next_neighbor_actions is not None else tr.neighbor_actions
        g = _q(learner, critic_input(tr.next_obs, nbr, cfg), tr.next_action)
    else:
        g = _q(learner, critic_input(tr.obs, tr.neighbor_actions, cfg), tr.action)
    if cfg.use_baseline and learner.baseline is not None:
        g = g - _v(learner, tr.obs)
    return g


def actor_direction(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> np.ndarray:
    """Unscaled ascent direction grad log pi(a|o) * G."""
    signal = np.asarray(actor_signal(learner, tr, cfg), dtype=float)
    probs = policy_probs(learner.theta, tr.obs, learner.actor, tr.mask)
    g = (_one_hot(tr.action, probs.shape[-1]) - probs) * signal[..., None]
    return learner.actor.vjp(learner.theta, tr.obs, g)


def actor_update(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> AgentLearner:
    """theta += a_theta * grad log pi(a|o) * G."""
    step = cfg.alpha_theta(learner.steps + 1)
    return replace(learner, theta=learner.theta + step * actor_direction(learner, tr, cfg))


def critic_update(learner: AgentLearner, tr: Transition, cfg: LearnerConfig) -> AgentLearner:
    """Policy evaluation step: the critic TD update plus, in the average-reward
    mode, the r_hat update, both driven by one TD error. Advances the step
    counter; the actor is left alone."""
    t = learner.steps + 1
    err, _, _, x = _td(learner, tr, cfg)
    omega = learner.omega + _q_grad(learner, x, tr.action, cfg.alpha_omega(t) * err)
    r_hat = learner.r_hat + cfg.alpha_r(t) * err if cfg.mode == "average_reward" else learner.r_hat
    return _evolve(learner, omega=omega, r_hat=r_hat, steps=t)


def learn(learner: AgentLearner, tr: Transition, cfg: LearnerConfig, actor_step=None) -> AgentLearner:
    """One full local update: critic, average reward, baseline and actor.

    Every block is computed from the pre-update parameters, then all are
    applied together and the step counter advances. ``actor_step`` can
    replace the plain actor update (e.g. a personalized one).
    """
    t = learner.steps + 1
    err, q, q_next, x = _td(learner, tr, cfg)
    omega = learner.omega + _q_grad(learner, x, tr.action, cfg.alpha_omega(t) * err)
    r_hat = learner.r_hat + cfg.alpha_r(t) * err if cfg.mode == "average_reward" else learner.r_hat
    delta = baseline_update(learner, tr, cfg).delta if cfg.use_baseline else learner.delta
    if actor_step is not None:
        theta = actor_step(learner, tr, cfg).theta
    else:
        signal = q_next if cfg.strict_actor_target else q
        if cfg.use_baseline and learner.baseline is not None:
            signal = signal - _v(learner, tr.obs)
        probs = tr.probs if tr.probs is not None else policy_probs(learner.theta, tr.obs, learner.actor, tr.mask)
        g = (_one_hot(tr.action, probs.shape[-1]) - probs) * (cfg.alpha_theta(t) * signal)[..., None]
        theta = learner.theta + learner.actor.vjp(learner.theta, tr.obs, g)
    return _checked(_evolve(learner, theta=theta, omega=omega, r_hat=r_hat, delta=delta, steps=t))
