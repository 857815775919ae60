"""Path-loss channel, SINR and effective-region geometry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from fedcomp.errors import ConfigError

# Distances below this are clamped to avoid the d -> 0 path-loss singularity.
MIN_DISTANCE = 0.5

FADING_KINDS = ("unit", "rayleigh")


@dataclass(frozen=True)
class ChannelConfig:
    tx_power: float = 1.0  # W, identical for every AP
    pathloss_exponent: float = 3.5
    noise_power: float = 1e-7  # W
    fading: str = "unit"

    def __post_init__(self):
        if not self.tx_power > 0:
            raise ConfigError(f"tx_power must be > 0, got {self.tx_power}")
        if not self.pathloss_exponent >= 2:
            raise ConfigError(f"pathloss_exponent must be >= 2, got {self.pathloss_exponent}")
        if not self.noise_power > 0:
            raise ConfigError(f"noise_power must be > 0, got {self.noise_power}")
        if self.fading not in FADING_KINDS:
            raise ConfigError(f"fading must be one of {FADING_KINDS}, got {self.fading!r}")


def distances(points: np.ndarray, aps: np.ndarray) -> np.ndarray:
    """Clamped Euclidean distances, shape (len(points), len(aps))."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    aps = np.asarray(aps, dtype=float).reshape(-1, 2)
    dx = points[:, 0:1] - aps[:, 0]
    dy = points[:, 1:2] - aps[:, 1]
    d = np.sqrt(dx * dx + dy * dy)
    return np.maximum(d, MIN_DISTANCE, out=d)


def mean_power(dist: np.ndarray, ch: ChannelConfig) -> np.ndarray:
    """Large-scale received power P * d^-alpha (no fading)."""
    return ch.tx_power * dist ** (-ch.pathloss_exponent)


def draw_fading(rng: np.random.Generator, shape, ch: ChannelConfig) -> np.ndarray:
    """Small-scale power fading beta; unit fading consumes no randomness."""
    if ch.fading == "unit":
        return np.ones(shape)
    return rng.exponential(1.0, size=shape)


def sinr_matrix(power: np.ndarray, serving: np.ndarray, noise_power: float) -> np.ndarray:
    """Per-user SINR from a (users, aps) received-power matrix and a serving mask.

    Every AP outside the user's serving set counts as interference.
    """
    signal = np.where(serving, power, 0.0).sum(axis=-1)
    interference = np.where(serving, 0.0, power).sum(axis=-1)
    return signal / (interference + noise_power)


def rate(sinr: np.ndarray) -> np.ndarray:
    return np.log2(1.0 + sinr)


def serving_mask(mean_pow: np.ndarray, cluster_of: np.ndarray) -> np.ndarray:
    """A user is served by the whole cluster of its strongest (large-scale) AP."""
    strongest = np.argmax(mean_pow, axis=1)
    return cluster_of[None, :] == cluster_of[strongest][:, None]


def compute_sinr(
    user_pos,
    cluster_of,
    ap_positions,
    ch: ChannelConfig,
    fading_draw: Optional[np.ndarray] = None,
) -> float:
    """SINR of a single user located at ``user_pos`` under a cluster assignment.

    ``cluster_of`` gives the cluster id of every AP. ``fading_draw`` is the
    per-AP power fading seen by this user; ``None`` means unit fading.
    """
    d = distances(np.asarray(user_pos, dtype=float)[None, :], ap_positions)
    mp = mean_power(d, ch)
    fad = np.ones_like(mp) if fading_draw is None else np.asarray(fading_draw, dtype=float).reshape(mp.shape)
    mask = serving_mask(mp, np.asarray(cluster_of))
    return float(sinr_matrix(mp * fad, mask, ch.noise_power)[0])


@dataclass(frozen=True)
class EffectiveRegion:
    """Users receiving at least ``threshold`` watts from one AP."""

    center: tuple
    radius: float
    threshold: float
    ch: ChannelConfig

    @property
    def empty(self) -> bool:
        return self.radius == 0.0

    def contains(self, points) -> np.ndarray:
        d = distances(points, np.asarray(self.center, dtype=float)[None, :])[:, 0]
        return mean_power(d, self.ch) >= self.threshold

    def __call__(self, points) -> np.ndarray:
        return self.contains(points)


def effective_radius(threshold: float, ch: ChannelConfig) -> float:
    """Radius solving P * r^-alpha = threshold; 0.0 when no point can qualify."""
    if not threshold > 0:
        raise ConfigError(f"effective threshold must be > 0, got {threshold}")
    if ch.tx_power * MIN_DISTANCE ** (-ch.pathloss_exponent) < threshold:
        return 0.0
    return (ch.tx_power / threshold) ** (1.0 / ch.pathloss_exponent)


def effective_region(topo, ch: ChannelConfig, ap: int) -> EffectiveRegion:
    threshold = topo.config.effective_threshold
    return EffectiveRegion(
        center=tuple(topo.positions[ap]),
        radius=effective_radius(threshold, ch),
        threshold=threshold,
        ch=ch,
    )


def coverage_matrix(dist: np.ndarray, ch: ChannelConfig, threshold: float) -> np.ndarray:
    """Boolean (users, aps): user inside the AP's effective region."""
    return mean_power(dist, ch) >= threshold

