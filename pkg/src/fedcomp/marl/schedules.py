"""Step-size schedules alpha_t = c / t^p."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedcomp.errors import ConfigError


@dataclass(frozen=True)
class Schedule:
    """``c / t**p`` for t >= 1. p = 0 is a constant step; decaying schedules
    need p in (0.5, 1] so that the steps sum to infinity while their squares
    stay summable."""

    c: float
    p: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"step size constant must be > 0, got {self.c}")
        if not (self.p == 0 or 0.5 < self.p <= 1):
            raise ConfigError(f"decay exponent must be 0 or in (0.5, 1], got {self.p}")

    @property
    def constant(self) -> bool:
        return self.p == 0

    def __call__(self, t) -> float:
        if self.p == 0:
            return self.c
        return self.c / np.maximum(t, 1) ** self.p

    @classmethod
    def parse(cls, value) -> "Schedule":
        """Accepts a number, a [c, p] pair or a {"c": .., "p": ..} mapping."""
        if isinstance(value, Schedule):
            return value
        if isinstance(value, (int, float)):
            return cls(float(value))
        if isinstance(value, dict):
            return cls(float(value["c"]), float(value.get("p", 0.0)))
        c, p = value
        return cls(float(c), float(p))

    def to_json(self):
        return {"c": self.c, "p": self.p}
