"""CoMP wireless environment: topology, traffic, SINR, handshake clustering, rewards."""

from fedcomp.env.channel import ChannelConfig, EffectiveRegion, compute_sinr, effective_radius, effective_region
from fedcomp.env.core import (
    REWARD_MODES,
    CompEnv,
    WorldState,
    decompose_reward,
    initial_world,
    serve,
    split_reward,
    step,
)
from fedcomp.env.handshake import ClusterAssignment, JointAction, mutual_links, resolve_handshake
from fedcomp.env.observation import Observation, ObservationConfig, observe
from fedcomp.env.topology import (
    NetworkTopology,
    TopologyConfig,
    action_slot_map,
    build_topology,
    canonical_actions,
    enumerate_actions,
    patch_topology,
    subtopology,
)
from fedcomp.env.traffic import TrafficConfig, Users, UserState, sample_users

__all__ = [
    "REWARD_MODES",
    "ChannelConfig",
    "ClusterAssignment",
    "CompEnv",
    "EffectiveRegion",
    "JointAction",
    "NetworkTopology",
    "Observation",
    "ObservationConfig",
    "TopologyConfig",
    "TrafficConfig",
    "UserState",
    "Users",
    "WorldState",
    "action_slot_map",
    "build_topology",
    "canonical_actions",
    "compute_sinr",
    "decompose_reward",
    "effective_radius",
    "effective_region",
    "enumerate_actions",
    "initial_world",
    "mutual_links",
    "observe",
    "patch_topology",
    "resolve_handshake",
    "sample_users",
    "serve",
    "split_reward",
    "step",
    "subtopology",
]
