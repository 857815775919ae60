"""The federated actor-critic training loop.

Each step: observe, sample actions, resolve the joint action, step the
environment, update every agent locally, then apply the federation
schedule. All agents live in one stacked learner so a step is a handful
of vectorized operations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from fedcomp.env.batch import BatchEnv
from fedcomp.env.core import CompEnv
from fedcomp.env.topology import direction_slot
from fedcomp.errors import ConfigError
from fedcomp.federation.aggregate import GlobalModel, SyncLog, should_sync, sync
from fedcomp.federation.coral import ObservationWindow, personalized_actor_update
from fedcomp.harness import seeding
from fedcomp.harness.config import ExperimentConfig
from fedcomp.marl.approximators import Approximator
from fedcomp.marl.learner import AgentLearner, Transition, create_learner, inverse_cdf, learn, softmax

METRICS_HEADER = (
    "step",
    "mean_global_reward",
    "ap_reward_min",
    "ap_reward_mean",
    "ap_reward_max",
    "clusters_1",
    "clusters_2",
    "clusters_3",
    "fed_sync",
    "r_hat_mean",
)
SYNC_HEADER = ("step", "mode", "norm_before", "norm_after")
N_NEIGHBOR_SLOTS = 6


def build_env(cfg: ExperimentConfig) -> CompEnv:
    return CompEnv(cfg.topology, cfg.channel, cfg.traffic, cfg.observation, cfg.reward_mode)


class UniformStream:
    """Per-agent uniforms drawn in blocks from independent generators.

    Agent i's k-th uniform depends only on (master seed, i, k).
    """

    def __init__(self, master: int, n_agents: int, block: int = 4096):
        self.gens = seeding.agent_generators(master, n_agents)
        self.block = block
        self.pos = block
        self.buf = np.empty((n_agents, block))

    def next(self) -> np.ndarray:
        if self.pos == self.block:
            for i, g in enumerate(self.gens):
                self.buf[i] = g.random(self.block)
            self.pos = 0
        u = self.buf[:, self.pos].copy()
        self.pos += 1
        return u


class Agents:
    """Action tables and feature maps shared by every run on one environment."""

    def __init__(self, env: CompEnv, cfg: ExperimentConfig):
        self.env = env
        n, k = env.n_aps, env.n_slots
        self.mask = np.zeros((n, k), dtype=bool)
        self.local_of_slot = np.full((n, k), -1, dtype=np.intp)
        for ap, slots in enumerate(env.slot_maps):
            self.mask[ap, slots] = True
            self.local_of_slot[ap, slots] = np.arange(len(slots))
        self.scale = cfg.agent.feature_scale
        self.n_features = cfg.observation.compact_dim + 1
        self.with_neighbors = cfg.agent.critic_input == "with_neighbor_actions"
        # requests[ap][local index] as a bool row over all APs
        self.request_rows = [np.array([[j in a for j in range(n)] for a in acts]) for acts in env.actions]
        self.dir_of = np.full((n, n), -1, dtype=np.intp)
        for i in range(n):
            for j in env.topo.neighbors[i]:
                self.dir_of[i, j] = direction_slot(env.topo, i, j)

    def features(self, counts: np.ndarray) -> np.ndarray:
        """[counts / scale, 1] along the last axis."""
        ones = np.ones(counts.shape[:-1] + (1,))
        return np.concatenate([counts / self.scale, ones], axis=-1)

    def local(self, slots: np.ndarray) -> np.ndarray:
        return self.local_of_slot[np.arange(len(slots)), slots]

    def neighbor_requests(self, local: np.ndarray) -> Optional[np.ndarray]:
        """(N, 6): whether the neighbor in each direction slot requests this AP."""
        if not self.with_neighbors:
            return None
        n = len(local)
        asks = np.stack([self.request_rows[j][local[j]] for j in range(n)])  # asks[j, i]: j requests i
        out = np.zeros((n, N_NEIGHBOR_SLOTS))
        i, j = np.nonzero(self.dir_of >= 0)
        out[i, self.dir_of[i, j]] = asks[j, i]
        return out

    def make_learner(self, cfg: ExperimentConfig) -> AgentLearner:
        a = cfg.agent
        k = self.env.n_slots
        critic_in = self.n_features + (N_NEIGHBOR_SLOTS if self.with_neighbors else 0)
        if a.kind == "linear":
            actor = Approximator.linear(self.n_features, k)
            critic = Approximator.linear(critic_in, k)
            base = Approximator.linear(self.n_features, 1) if a.use_baseline else None
        else:
            actor = Approximator.mlp(self.n_features, k, a.hidden)
            critic = Approximator.mlp(critic_in, k, a.hidden)
            base = Approximator.mlp(self.n_features, 1, a.hidden) if a.use_baseline else None
        rng = seeding.generator(cfg.seed, seeding.INIT)
        return create_learner(actor, critic, rng, n_agents=self.env.n_aps, baseline=base)


@dataclass
class RunResult:
    rewards: np.ndarray  # global reward per step
    metrics: List[tuple]
    learner: AgentLearner
    sync_log: SyncLog
    steps_run: int
    stopped_early: bool = False

    def final_mean(self, fraction: float = 0.1) -> float:
        """Mean global reward over the last ``fraction`` of the steps run."""
        if self.steps_run == 0:
            return float("nan")
        k = max(1, int(round(self.steps_run * fraction)))
        return float(self.rewards[self.steps_run - k : self.steps_run].mean())


class PlateauDetector:
    """Signals a stop once the best block mean is ``patience`` steps old."""

    def __init__(self, block: int, patience: int):
        self.block, self.patience = block, patience
        self.best = -np.inf
        self.best_at = 0

    def update(self, t: int, rewards: np.ndarray) -> bool:
        if t % self.block:
            return False
        m = float(rewards[t - self.block : t].mean())
        if m > self.best:
            self.best, self.best_at = m, t
        return t - self.best_at >= self.patience


def _metrics_row(t, rewards, ap_sum, sizes, synced, learner, span):
    ap = ap_sum / span
    return (
        t,
        float(rewards[t - span : t].mean()),
        float(ap.min()),
        float(ap.mean()),
        float(ap.max()),
        int(sizes[1]),
        int(sizes[2]),
        int(sizes[3]),
        int(synced),
        float(np.mean(learner.r_hat)),
    )


LOCKSTEP_SHARED = (
    "topology",
    "channel",
    "traffic",
    "observation",
    "agent",
    "reward_mode",
    "mode",
    "horizon",
    "total_steps",
    "eval_every",
)


def _check_lockstep(cfgs: Sequence[ExperimentConfig]):
    if not cfgs:
        raise ConfigError("at least one configuration is required")
    if len(cfgs) == 1:
        return
    first = cfgs[0]
    for c in cfgs[1:]:
        for name in LOCKSTEP_SHARED:
            if getattr(c, name) != getattr(first, name):
                raise ConfigError(f"lockstep runs must share {name!r}")
    for c in cfgs:
        if c.plateau.enabled or c.federation.mode == "coral_personalized":
            raise ConfigError("plateau stopping and personalized federation run one configuration at a time")


class _Run:
    """Per-configuration state of one run inside a lockstep batch."""

    def __init__(self, cfg: ExperimentConfig, index: int, n_aps: int):
        self.cfg = cfg
        self.index = index
        self.rows = slice(index * n_aps, (index + 1) * n_aps)
        self.env_rng = seeding.generator(cfg.seed, seeding.ENV)
        self.uniforms = UniformStream(cfg.seed, n_aps)
        self.rewards = np.zeros(cfg.total_steps)
        self.metrics: List[tuple] = []
        self.log = SyncLog()
        self.global_model: Optional[GlobalModel] = None
        self.ap_sum = np.zeros(n_aps)
        self.synced = False


def _slice(learner: AgentLearner, rows: slice) -> AgentLearner:
    return replace(
        learner,
        theta=learner.theta[rows],
        omega=learner.omega[rows],
        r_hat=learner.r_hat[rows],
        delta=None if learner.delta is None else learner.delta[rows],
    )


def _stack(parts: Sequence[AgentLearner]) -> AgentLearner:
    if len(parts) == 1:
        return parts[0]

    def cat(name):
        return None if getattr(parts[0], name) is None else np.concatenate([getattr(p, name) for p in parts])

    return replace(parts[0], theta=cat("theta"), omega=cat("omega"), r_hat=cat("r_hat"), delta=cat("delta"))


def _sync_groups(learner: AgentLearner, runs: List[_Run], t: int) -> AgentLearner:
    """Each run's agents form their own federation group."""
    if len(runs) == 1:
        run = runs[0]
        learner, run.global_model, event = sync(learner, run.cfg.federation, t, run.global_model)
        if event is not None:
            run.log.record(event)
            run.synced = True
        return learner
    blocks = None
    for run in runs:
        if not should_sync(run.cfg.federation, t):
            continue
        if blocks is None:
            blocks = {
                n: getattr(learner, n).copy() for n in ("theta", "omega", "r_hat", "delta") if getattr(learner, n) is not None
            }
        part, run.global_model, event = sync(_slice(learner, run.rows), run.cfg.federation, t, run.global_model)
        for name, arr in blocks.items():
            arr[run.rows] = getattr(part, name)
        run.log.record(event)
        run.synced = True
    return learner if blocks is None else replace(learner, **blocks)


def run_many(cfgs: Sequence[ExperimentConfig], learners: Optional[Sequence[AgentLearner]] = None) -> List[RunResult]:
    """Advance several configurations in lockstep through one stacked learner.

    The configurations may differ in seed and federation schedule only.
    Each run keeps its own world, random streams and federation group, and
    its trajectory is identical to running it alone.
    """
    cfgs = list(cfgs)
    _check_lockstep(cfgs)
    lead = cfgs[0]
    env = build_env(lead)
    agents = Agents(env, lead)
    runs = [_Run(c, k, env.n_aps) for k, c in enumerate(cfgs)]
    if learners is None:
        learners = [agents.make_learner(c) for c in cfgs]
    elif len(learners) != len(cfgs):
        raise ConfigError("one learner per configuration is required")
    return _loop(env, agents, runs, _stack(list(learners)), lead)


def _loop(env: CompEnv, agents: Agents, runs: List[_Run], learner: AgentLearner, lead: ExperimentConfig) -> List[RunResult]:
    lcfg = lead.learner
    actor = learner.actor
    total = lead.total_steps
    n_runs = len(runs)
    n_aps = env.n_aps
    single = n_runs == 1
    episodic = lead.mode == "episodic"
    benv = BatchEnv(env)
    mask = np.tile(agents.mask, (n_runs, 1))
    local_of_slot = np.tile(agents.local_of_slot, (n_runs, 1))
    rows = np.arange(n_runs * n_aps)
    solo = runs[0]
    fed = solo.cfg.federation
    coral = single and fed.mode == "coral_personalized"
    window = ObservationWindow(n_aps, agents.n_features, fed.coral_window) if coral else None
    plateau = PlateauDetector(lead.plateau.block, lead.plateau.patience) if single and lead.plateau.enabled else None
    done_all = np.full(n_runs * n_aps, True)
    rngs = [r.env_rng for r in runs]

    def observe(batch):
        return agents.features(benv.compact(batch)).reshape(n_runs * n_aps, -1)

    def uniforms():
        if single:
            return solo.uniforms.next()
        return np.concatenate([r.uniforms.next() for r in runs])

    def neighbors(local):
        if not agents.with_neighbors:
            return None
        return np.concatenate([agents.neighbor_requests(l) for l in local])

    def act(theta, obs):
        slots = inverse_cdf(softmax(actor.forward(theta, obs), mask), uniforms())
        local = local_of_slot[rows, slots].reshape(n_runs, n_aps)
        return slots, local

    batch = benv.reset(rngs)
    obs = observe(batch)
    slots, local = act(learner.theta, obs)
    nbr = neighbors(local)
    stopped = False
    t = 0
    while t < total:
        t += 1
        batch, per_ap, glob = benv.step(batch, local)
        for k, r in enumerate(runs):
            r.rewards[t - 1] = glob[k]
            r.ap_sum += per_ap[k]
        done = episodic and t % lead.horizon == 0
        if done:
            batch = benv.reset(rngs)
        next_obs = observe(batch)
        next_slots, next_local = act(learner.theta, next_obs)
        next_nbr = neighbors(next_local)
        tr = Transition(
            obs,
            slots,
            per_ap.reshape(-1),
            next_obs,
            next_slots,
            nbr,
            next_nbr,
            mask,
            done=done_all if done else None,
        )
        step_fn = None
        if coral:
            window.push(obs)
            if solo.global_model is not None:

                def step_fn(lr, tr_, c, g=solo.global_model, b=window.batch()):
                    return personalized_actor_update(lr, tr_, c, g, fed.coral_weight, b)

        learner = learn(learner, tr, lcfg, actor_step=step_fn)
        learner = _sync_groups(learner, runs, t)

        if t % lead.eval_every == 0:
            for r in runs:
                sizes = np.bincount(np.bincount(batch.cluster_of[r.index]), minlength=4)
                row = _metrics_row(t, r.rewards, r.ap_sum, sizes, r.synced, _slice(learner, r.rows), lead.eval_every)
                r.metrics.append(row)
                r.ap_sum[:] = 0
                r.synced = False
        if plateau is not None and plateau.update(t, solo.rewards):
            stopped = True
            break
        obs, slots, local, nbr = next_obs, next_slots, next_local, next_nbr
    return [
        RunResult(r.rewards[:t], r.metrics, learner if single else _slice(learner, r.rows), r.log, t, stopped)
        for r in runs
    ]


def run_experiment(cfg: ExperimentConfig, learner: Optional[AgentLearner] = None) -> RunResult:
    """Train one configuration for ``cfg.total_steps`` steps (or until the plateau detector fires).

    ``learner`` resumes from existing parameters instead of a fresh draw.
    """
    return run_many([cfg], None if learner is None else [learner])[0]


def random_policy_rewards(cfgs: Sequence[ExperimentConfig], steps: int) -> np.ndarray:
    """Global reward per step, shape (len(cfgs), steps), when every AP requests uniformly at random.

    Each configuration uses the world stream of its own seed.
    """
    cfgs = list(cfgs)
    if not cfgs:
        raise ConfigError("at least one configuration is required")
    for c in cfgs[1:]:
        for name in ("topology", "channel", "traffic", "reward_mode"):
            if getattr(c, name) != getattr(cfgs[0], name):
                raise ConfigError(f"random-policy runs must share {name!r}")
    env = build_env(cfgs[0])
    benv = BatchEnv(env)
    pickers = [seeding.generator(c.seed, seeding.BASELINE) for c in cfgs]
    batch = benv.reset([seeding.generator(c.seed, seeding.ENV) for c in cfgs])
    out = np.zeros((len(cfgs), steps))
    for t in range(steps):
        idx = [(g.random(env.n_aps) * env.n_actions).astype(np.intp) for g in pickers]
        batch, _, out[:, t] = benv.step(batch, idx)
    return out


# output files ---------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_metrics(path: Path, rows: List[tuple]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_sync_events(path: Path, log: SyncLog):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SYNC_HEADER)
        for e in log.events:
            w.writerow([e.step, e.mode, repr(e.norm_before), repr(e.norm_after)])


def run_to_directory(cfg: ExperimentConfig, out_dir, learner: Optional[AgentLearner] = None) -> RunResult:
    """Run and write config.json, metrics.csv, sync_events.csv, summary.json and final.ckpt."""
    from fedcomp.harness.checkpoint import save_checkpoint

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg, learner)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    write_metrics(out / "metrics.csv", result.metrics)
    write_sync_events(out / "sync_events.csv", result.sync_log)
    summary = {
        "steps_run": result.steps_run,
        "stopped_early": result.stopped_early,
        "final_mean_reward": None if result.steps_run == 0 else result.final_mean(),
        "n_syncs": len(result.sync_log.events),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_checkpoint(out / "final.ckpt", result.learner, cfg)
    return result
