"""Experiment configuration: one JSON section per module."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from fedcomp.env.channel import ChannelConfig
from fedcomp.env.core import REWARD_MODES
from fedcomp.env.observation import ObservationConfig
from fedcomp.env.topology import TopologyConfig
from fedcomp.env.traffic import TrafficConfig
from fedcomp.errors import ConfigError
from fedcomp.federation.aggregate import FederationConfig
from fedcomp.info_model import InfoParams
from fedcomp.marl.learner import CRITIC_INPUTS, MODES, LearnerConfig
from fedcomp.marl.schedules import Schedule

RUN_MODES = ("non_episodic", "episodic")
APPROX_KINDS = ("linear", "mlp")


@dataclass(frozen=True)
class AgentConfig:
    """Learner settings plus the approximator architecture."""

    kind: str = "linear"
    hidden: Tuple[int, ...] = (32, 32)
    gamma: float = 0.99
    alpha_theta: Schedule = Schedule(1e-3)
    alpha_omega: Schedule = Schedule(1e-2)
    alpha_r: Schedule = Schedule(1e-3)
    critic_input: str = "self_only"
    use_baseline: bool = False
    strict_actor_target: bool = False
    feature_scale: float = 8.0  # user counts are divided by this before entering the approximators

    def __post_init__(self):
        if self.kind not in APPROX_KINDS:
            raise ConfigError(f"agent kind must be one of {APPROX_KINDS}, got {self.kind!r}")
        if self.critic_input not in CRITIC_INPUTS:
            raise ConfigError(f"critic_input must be one of {CRITIC_INPUTS}")
        if not self.feature_scale > 0:
            raise ConfigError("feature_scale must be > 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("alpha_theta", "alpha_omega", "alpha_r"):
            object.__setattr__(self, name, Schedule.parse(getattr(self, name)))

    def learner_config(self, mode: str) -> LearnerConfig:
        return LearnerConfig(
            gamma=self.gamma,
            alpha_theta=self.alpha_theta,
            alpha_omega=self.alpha_omega,
            alpha_r=self.alpha_r,
            mode="episodic" if mode == "episodic" else "average_reward",
            critic_input=self.critic_input,
            use_baseline=self.use_baseline,
            strict_actor_target=self.strict_actor_target,
        )


@dataclass(frozen=True)
class PlateauConfig:
    """Stop when the mean reward of ``block`` steps has not improved for ``patience`` steps."""

    enabled: bool = False
    block: int = 1000
    patience: int = 20000

    def __post_init__(self):
        if self.block < 1 or self.patience < self.block:
            raise ConfigError("plateau needs block >= 1 and patience >= block")


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TopologyConfig = TopologyConfig()
    channel: ChannelConfig = ChannelConfig()
    traffic: TrafficConfig = TrafficConfig()
    observation: ObservationConfig = ObservationConfig()
    agent: AgentConfig = AgentConfig()
    federation: FederationConfig = FederationConfig()
    info_model: InfoParams = InfoParams()
    plateau: PlateauConfig = PlateauConfig()
    seed: int = 0
    total_steps: int = 200_000
    eval_every: int = 1000
    reward_mode: str = "cell_edge_sum_rate"
    mode: str = "non_episodic"
    horizon: int = 512

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ConfigError(f"reward_mode must be one of {REWARD_MODES}")
        if self.mode not in RUN_MODES:
            raise ConfigError(f"mode must be one of {RUN_MODES}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")

    @property
    def learner(self) -> LearnerConfig:
        return self.agent.learner_config(self.mode)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return _to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def model_hash(self) -> str:
        """Digest of everything that fixes the environment and parameter shapes.

        Run-length settings and the seed are excluded, so a checkpoint can be
        resumed under a different seed or step budget.
        """
        d = self.to_dict()
        for key in ("seed", "total_steps", "eval_every", "plateau"):
            d.pop(key, None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        sections = {
            "topology": TopologyConfig,
            "channel": ChannelConfig,
            "traffic": TrafficConfig,
            "observation": ObservationConfig,
            "agent": AgentConfig,
            "federation": FederationConfig,
            "info_model": InfoParams,
            "plateau": PlateauConfig,
        }
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value, key)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _build(kind, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be an object")
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    value = dict(value)
    if kind is TrafficConfig and value.get("area") is not None:
        value["area"] = tuple(value["area"])
    try:
        return kind(**value)
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"section {name!r}: {exc}") from exc


def _to_jsonable(obj):
    if isinstance(obj, Schedule):
        return obj.to_json()
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def reference_config() -> Dict[str, Any]:
    """Every setting at its default value."""
    return ExperimentConfig().to_dict()


def load_or_default(path: Optional[str]) -> ExperimentConfig:
    return ExperimentConfig() if path is None else ExperimentConfig.load(path)
