"""Binary checkpoints of a stacked learner population.

Layout: the 4 magic bytes ``FMRL``, a little-endian u32 format version, a
u32 header length, the UTF-8 JSON header, then each array listed in the
header as little-endian float64 in C order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from fedcomp.errors import CheckpointError
from fedcomp.marl.approximators import Approximator
from fedcomp.marl.learner import AgentLearner

MAGIC = b"FMRL"
VERSION = 1
ARRAY_NAMES = ("theta", "omega", "delta", "r_hat")


@dataclass(frozen=True)
class Checkpoint:
    config_hash: str
    steps: int
    arrays: Dict[str, np.ndarray]
    approximators: Dict[str, Optional[dict]]

    def to_learner(self, template: Optional[AgentLearner] = None) -> AgentLearner:
        """Rebuild the learner; ``template`` (if given) must match every shape."""

        def approx(d):
            return None if d is None else Approximator(d["kind"], d["n_in"], d["n_out"], tuple(d["hidden"]))

        actor, critic, base = (approx(self.approximators[k]) for k in ("actor", "critic", "baseline"))
        if template is not None:
            for name in ARRAY_NAMES:
                a, b = getattr(template, name), self.arrays.get(name)
                if (a is None) != (b is None) or (a is not None and np.shape(a) != b.shape):
                    raise CheckpointError(f"checkpoint {name} shape does not match the configured learner")
        return AgentLearner(
            actor=actor,
            critic=critic,
            theta=self.arrays["theta"].copy(),
            omega=self.arrays["omega"].copy(),
            r_hat=self.arrays["r_hat"].copy(),
            baseline=base,
            delta=None if self.arrays.get("delta") is None else self.arrays["delta"].copy(),
            steps=self.steps,
        )


def _approx_dict(a: Optional[Approximator]):
    return None if a is None else {"kind": a.kind, "n_in": a.n_in, "n_out": a.n_out, "hidden": list(a.hidden)}


def encode(learner: AgentLearner, config_hash: str) -> bytes:
    arrays = [(n, np.asarray(getattr(learner, n), dtype="<f8")) for n in ARRAY_NAMES if getattr(learner, n) is not None]
    header = {
        "config_hash": config_hash,
        "steps": int(learner.steps),
        "n_agents": learner.n_agents,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "approximators": {
            "actor": _approx_dict(learner.actor),
            "critic": _approx_dict(learner.critic),
            "baseline": _approx_dict(learner.baseline),
        },
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(a).tobytes() for _, a in arrays]
    return b"".join(parts)


def decode(data: bytes, expected_hash: Optional[str] = None) -> Checkpoint:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(data) < 12 + hlen:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if expected_hash is not None and header.get("config_hash") != expected_hash:
        raise CheckpointError("checkpoint config hash does not match the configuration")
    offset = 12 + hlen
    arrays: Dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        shape = tuple(int(s) for s in spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CheckpointError(f"truncated checkpoint: array {spec['name']} is incomplete")
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(float)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"checkpoint has {len(data) - offset} unexpected trailing bytes")
    for name in ("theta", "omega", "r_hat"):
        if name not in arrays:
            raise CheckpointError(f"checkpoint lacks the {name} array")
    n = int(header["n_agents"])
    for name, a in arrays.items():
        if a.shape[:1] != (n,):
            raise CheckpointError(f"array {name} has leading dimension {a.shape[:1]}, expected {n} agents")
    return Checkpoint(header["config_hash"], int(header["steps"]), arrays, header["approximators"])


def save_checkpoint(path, learner: AgentLearner, cfg) -> None:
    """Write ``learner`` tagged with the model hash of experiment config ``cfg``."""
    if not learner.batched:
        raise CheckpointError("checkpoints store a stacked population learner")
    Path(path).write_bytes(encode(learner, cfg.model_hash()))


def load_checkpoint(path, cfg=None) -> Checkpoint:
    """Read a checkpoint; with ``cfg`` the stored hash must match its model hash."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data, None if cfg is None else cfg.model_hash())
