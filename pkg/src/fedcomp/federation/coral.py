"""CORAL feature-covariance alignment used to personalize local actors."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from fedcomp.errors import ConfigError
from fedcomp.federation.aggregate import GlobalModel
from fedcomp.marl.learner import AgentLearner, LearnerConfig, Transition, actor_direction


def covariance(x: np.ndarray) -> np.ndarray:
    """Sample covariance over the batch axis (-2), denominator n - 1."""
    xc = x - x.mean(axis=-2, keepdims=True)
    return np.swapaxes(xc, -1, -2) @ xc / (x.shape[-2] - 1)


def _check(local: np.ndarray, glob: np.ndarray):
    local = np.asarray(local, dtype=float)
    glob = np.asarray(glob, dtype=float)
    if local.shape[-2] < 2 or glob.shape[-2] < 2:
        raise ValueError("CORAL needs a batch of at least 2 rows")
    if local.shape[-1] != glob.shape[-1]:
        raise ValueError(f"feature widths differ: {local.shape[-1]} vs {glob.shape[-1]}")
    return local, glob


def coral_loss(local_feats: np.ndarray, global_feats: np.ndarray):
    """||C_local - C_global||_F^2 / (4 d^2); one value per leading index."""
    local, glob = _check(local_feats, global_feats)
    d = local.shape[-1]
    diff = covariance(local) - covariance(glob)
    return np.sum(diff * diff, axis=(-2, -1)) / (4.0 * d * d)


def coral_grad(local_feats: np.ndarray, global_feats: np.ndarray) -> np.ndarray:
    """d coral_loss / d local_feats = X_c (C_local - C_global) / ((n - 1) d^2)."""
    local, glob = _check(local_feats, global_feats)
    n, d = local.shape[-2], local.shape[-1]
    xc = local - local.mean(axis=-2, keepdims=True)
    return xc @ (covariance(local) - covariance(glob)) / ((n - 1) * d * d)


class ObservationWindow:
    """Circular buffer of each agent's most recent observations."""

    def __init__(self, n_agents: int, dim: int, size: int = 32):
        if size < 2:
            raise ConfigError("window size must be >= 2")
        self.buf = np.zeros((n_agents, size, dim))
        self.count = 0

    @property
    def size(self) -> int:
        return self.buf.shape[1]

    def push(self, obs: np.ndarray):
        self.buf[:, self.count % self.size] = obs
        self.count += 1

    def batch(self) -> Optional[np.ndarray]:
        """(A, n, dim) filled rows, or None while fewer than two are stored."""
        n = min(self.count, self.size)
        return None if n < 2 else self.buf[:, :n]


def coral_theta_grad(learner: AgentLearner, global_model: GlobalModel, batch: np.ndarray) -> np.ndarray:
    """Gradient of the CORAL loss w.r.t. the actor parameters.

    Local features come from each agent's own actor on its recent
    observations; the global features replay the same observations through
    the frozen global actor.
    """
    actor = learner.actor
    g_theta = global_model.theta
    if learner.batched and g_theta.ndim == 1:
        g_theta = np.broadcast_to(g_theta, learner.theta.shape)
    local = actor.features(learner.theta, batch)
    glob = actor.features(g_theta, batch)
    return actor.features_vjp(learner.theta, batch, coral_grad(local, glob))


def personalized_actor_update(
    learner: AgentLearner,
    tr: Transition,
    cfg: LearnerConfig,
    global_model: Optional[GlobalModel],
    weight: float,
    batch: Optional[np.ndarray],
) -> AgentLearner:
    """Actor step along grad log pi * G - weight * grad CORAL(local, global)."""
    if global_model is None:
        raise ValueError("personalized update needs a global model snapshot")
    direction = actor_direction(learner, tr, cfg)
    if weight > 0 and batch is not None:
        direction = direction - weight * coral_theta_grad(learner, global_model, batch)
    step = cfg.alpha_theta(learner.steps + 1)
    return replace(learner, theta=learner.theta + step * direction)
