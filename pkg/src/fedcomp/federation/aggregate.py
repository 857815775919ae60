"""Parameter averaging across agents and the periodic sync schedule."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from fedcomp.errors import ConfigError

FED_MODES = ("none", "fedavg_full", "fedavg_critic_only", "coral_personalized")


@dataclass(frozen=True)
class FederationConfig:
    period_F: int = 20
    mode: str = "fedavg_full"
    coral_weight: float = 0.0
    coral_window: int = 32
    coral_average_critic: bool = False  # personalized mode: also hard-average omega, delta, r_hat

    def __post_init__(self):
        if self.period_F < 1:
            raise ConfigError(f"period_F must be >= 1, got {self.period_F}")
        if self.mode not in FED_MODES:
            raise ConfigError(f"federation mode must be one of {FED_MODES}, got {self.mode!r}")
        if self.coral_weight < 0:
            raise ConfigError("coral_weight must be >= 0")
        if self.coral_window < 2:
            raise ConfigError("coral_window must be >= 2")


def fed_average(params) -> np.ndarray:
    """Elementwise mean over agents (axis 0), summed in agent-id order.

    The running sum visits agents 0, 1, ... in turn, so the result does not
    depend on BLAS reduction order. It is then clipped to the per-component
    [min, max] range, which only ever removes round-off; with identical
    inputs the output is bit-identical to them.
    """
    if isinstance(params, np.ndarray):
        stack = np.asarray(params, dtype=float)
        if stack.ndim == 0 or len(stack) == 0:
            raise ValueError("fed_average needs at least one parameter set")
    else:
        items = [np.asarray(p, dtype=float) for p in params]
        if not items:
            raise ValueError("fed_average needs at least one parameter set")
        shapes = {p.shape for p in items}
        if len(shapes) != 1:
            raise ValueError(f"parameter sets differ in shape: {sorted(shapes)}")
        stack = np.stack(items)
    total = np.zeros(stack.shape[1:])
    for row in stack:
        total = total + row
    mean = total / len(stack)
    return np.clip(mean, stack.min(axis=0), stack.max(axis=0))


@dataclass(frozen=True)
class GlobalModel:
    """Averaged parameters captured at the last sync."""

    theta: np.ndarray
    omega: np.ndarray
    r_hat: float
    delta: Optional[np.ndarray] = None
    step: int = 0


@dataclass(frozen=True)
class SyncEvent:
    step: int
    mode: str
    norm_before: float
    norm_after: float


def should_sync(cfg: FederationConfig, t: int) -> bool:
    return cfg.mode != "none" and t >= 1 and t % cfg.period_F == 0


def _norm(learner) -> float:
    blocks = [learner.theta, learner.omega, np.atleast_1d(learner.r_hat)]
    if learner.delta is not None:
        blocks.append(learner.delta)
    return float(np.sqrt(sum(float(np.sum(np.square(b))) for b in blocks)))


def snapshot(learner, t: int) -> GlobalModel:
    return GlobalModel(
        theta=fed_average(learner.theta),
        omega=fed_average(learner.omega),
        r_hat=float(fed_average(np.asarray(learner.r_hat)[:, None])[0]),
        delta=None if learner.delta is None else fed_average(learner.delta),
        step=t,
    )


def sync(learner, cfg: FederationConfig, t: int, global_model: Optional[GlobalModel] = None):
    """Apply the federation schedule to a stacked population.

    Returns ``(learner, global_model, event)``; ``event`` is None when no
    sync fired at step ``t``.
    """
    if not learner.batched:
        raise ValueError("sync operates on a stacked population learner")
    if not should_sync(cfg, t):
        return learner, global_model, None
    before = _norm(learner)
    g = snapshot(learner, t)
    n = learner.n_agents

    def spread(v):
        return np.tile(v, (n, 1))

    if cfg.mode == "fedavg_full":
        learner = replace(
            learner,
            theta=spread(g.theta),
            omega=spread(g.omega),
            r_hat=np.full(n, g.r_hat),
            delta=None if g.delta is None else spread(g.delta),
        )
    elif cfg.mode == "fedavg_critic_only" or (cfg.mode == "coral_personalized" and cfg.coral_average_critic):
        learner = replace(
            learner,
            omega=spread(g.omega),
            r_hat=np.full(n, g.r_hat),
            delta=None if g.delta is None else spread(g.delta),
        )
    return learner, g, SyncEvent(t, cfg.mode, before, _norm(learner))


@dataclass
class SyncLog:
    events: List[SyncEvent] = field(default_factory=list)

    def record(self, event: Optional[SyncEvent]):
        if event is not None:
            self.events.append(event)

    def steps(self) -> Sequence[int]:
        return [e.step for e in self.events]
