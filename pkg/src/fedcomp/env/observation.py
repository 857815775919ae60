"""Local AP observations: an intensity image and a compact sector histogram."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedcomp.errors import ConfigError


@dataclass(frozen=True)
class ObservationConfig:
    grid_size: int = 8
    n_sectors: int = 8
    ring_split: float = 0.7  # inner/outer ring boundary as a fraction of the effective radius

    def __post_init__(self):
        if self.grid_size < 1 or self.n_sectors < 1:
            raise ConfigError("grid_size and n_sectors must be >= 1")
        if not 0 < self.ring_split < 1:
            raise ConfigError("ring_split must be in (0, 1)")

    @property
    def compact_dim(self) -> int:
        return 2 * self.n_sectors


@dataclass(frozen=True)
class Observation:
    grid: np.ndarray  # (G, G, 2): channel 0 users, channel 1 neighbor APs
    compact: np.ndarray  # (2 * n_sectors,): ring-major user counts


def compact_counts(
    user_pos: np.ndarray, ap_pos: np.ndarray, radius: float, cfg: ObservationConfig, dist: np.ndarray = None
) -> np.ndarray:
    """User counts per (ring, sector) inside each AP's effective disc, shape (N, 2 * sectors).

    ``dist`` optionally supplies the (users, aps) distance matrix.
    """
    n_aps = len(ap_pos)
    if len(user_pos) == 0 or radius <= 0:
        return np.zeros((n_aps, cfg.compact_dim))
    if dist is None:
        dist = np.hypot(user_pos[:, None, 0] - ap_pos[None, :, 0], user_pos[:, None, 1] - ap_pos[None, :, 1])
    u, a = np.nonzero(dist <= radius)
    rel = user_pos[u] - ap_pos[a]
    angle = np.arctan2(rel[:, 1], rel[:, 0]) % (2 * np.pi)
    sector = np.minimum((angle * (cfg.n_sectors / (2 * np.pi))).astype(np.intp), cfg.n_sectors - 1)
    ring = (dist[u, a] >= cfg.ring_split * radius).astype(np.intp)
    flat = a * cfg.compact_dim + ring * cfg.n_sectors + sector
    return np.bincount(flat, minlength=n_aps * cfg.compact_dim).reshape(n_aps, cfg.compact_dim).astype(float)


def _cells(rel: np.ndarray, radius: float, g: int) -> np.ndarray:
    return np.floor((rel + radius) / (2 * radius) * g).astype(np.intp)


def user_grid(user_pos: np.ndarray, center: np.ndarray, radius: float, g: int) -> np.ndarray:
    img = np.zeros((g, g))
    if len(user_pos) == 0 or radius <= 0:
        return img
    rel = user_pos - center
    win = np.all((rel >= -radius) & (rel < radius), axis=1)
    if not win.any():
        return img
    cx, cy = _cells(rel[win], radius, g).T
    np.add.at(img, (np.clip(cx, 0, g - 1), np.clip(cy, 0, g - 1)), 1.0)
    return img / img.max()


def neighbor_grid(nbr_pos: np.ndarray, center: np.ndarray, radius: float, g: int) -> np.ndarray:
    """Marks neighbor APs; APs beyond the window are projected onto its border."""
    img = np.zeros((g, g))
    if len(nbr_pos) == 0 or radius <= 0:
        return img
    rel = nbr_pos - center
    reach = np.max(np.abs(rel), axis=1, keepdims=True)
    scale = np.where(reach >= radius, radius * (1 - 1e-9) / np.maximum(reach, 1e-300), 1.0)
    cx, cy = _cells(rel * scale, radius, g).T
    img[np.clip(cx, 0, g - 1), np.clip(cy, 0, g - 1)] = 1.0
    return img


def observe(world, ap: int, topo, cfg: ObservationConfig) -> Observation:
    """Observation of one AP; depends only on users inside its window."""
    center = topo.positions[ap]
    radius = topo.effective_radius
    users = world.users.pos
    grid = np.stack(
        [
            user_grid(users, center, radius, cfg.grid_size),
            neighbor_grid(topo.positions[list(topo.neighbors[ap])], center, radius, cfg.grid_size),
        ],
        axis=-1,
    )
    compact = compact_counts(users, center[None, :], radius, cfg)[0]
    return Observation(grid=grid, compact=compact)


def all_grids(world, topo, cfg: ObservationConfig) -> np.ndarray:
    """Flattened images for every AP, shape (N, G * G * 2)."""
    return np.stack([observe(world, ap, topo, cfg).grid.ravel() for ap in range(topo.n_aps)])
