"""Informational model of federated multi-agent learning.

Each agent accumulates local information ``I_env`` toward a ceiling
``C_env`` and, per neighbor, coordinating information ``I_star`` toward
``C_star``. Gains are proportional to the information still missing;
coordinating information decays when neighbors' policies drift, except on
steps where a federated average is performed. Closed-form bounds give the
number of steps needed to come within a fraction ``epsilon`` of the
ceilings.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional

import numpy as np

from fedcomp.errors import ConfigError, ValidityError

LAMBDA_FNS = ("identity",)

# Tolerance of the ceiling normalization c_env + n_neighbors * c_star = 1.
NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class InfoParams:
    n_agents: int = 10
    n_neighbors: int = 9
    k_env: float = 0.05
    k_star: float = 0.01
    c_env: float = 0.1
    c_star: float = 0.1
    i_env0: float = 0.01
    i_star0: float = 0.01
    period_F: int = 10
    epsilon: float = 0.001
    lambda_fn: str = "identity"

    def __post_init__(self):
        if self.n_agents < 1 or self.n_neighbors < 0:
            raise ConfigError("n_agents must be >= 1 and n_neighbors >= 0")
        if not (0 <= self.k_env <= 1 and 0 <= self.k_star <= 1):
            raise ConfigError("gain coefficients must lie in [0, 1]")
        if abs(self.c_env + self.n_neighbors * self.c_star - 1.0) > NORMALIZATION_TOL:
            raise ConfigError(
                f"ceilings must satisfy c_env + n_neighbors * c_star = 1, got "
                f"{self.c_env} + {self.n_neighbors} * {self.c_star}"
            )
        if not (0 <= self.i_env0 <= self.c_env and 0 <= self.i_star0 <= self.c_star):
            raise ConfigError("initial information must lie between 0 and its ceiling")
        if self.n_agents * self.k_star >= 1 or self.n_agents * self.k_env >= 1:
            raise ConfigError("n_agents * k must stay below 1")
        if self.period_F < 1:
            raise ConfigError("period_F must be >= 1")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.lambda_fn not in LAMBDA_FNS:
            raise ConfigError(f"lambda_fn must be one of {LAMBDA_FNS}")

    @classmethod
    def from_dict(cls, data: dict) -> "InfoParams":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown info-model fields: {sorted(extra)}")
        return cls(**data)


def learn_fn(name: str):
    """The information-learning function Lambda; it must satisfy Lambda(x) <= x."""
    if name == "identity":
        return lambda x: x
    raise ConfigError(f"unknown lambda_fn {name!r}")


# simulation -----------------------------------------------------------------


@dataclass
class InfoTrajectory:
    i_env: np.ndarray
    i_star: np.ndarray
    gain_env: np.ndarray
    gain_star: np.ndarray
    loss_star: np.ndarray
    federated: np.ndarray  # bool per step

    def first_crossing(self, which: str, threshold: float) -> Optional[int]:
        """First step whose information reaches ``threshold``, or None."""
        series = self.i_env if which == "env" else self.i_star
        hit = np.nonzero(series >= threshold)[0]
        return int(hit[0]) if len(hit) else None


def simulate_info(p: InfoParams, horizon: int, with_loss: bool = True) -> InfoTrajectory:
    """Iterate the per-step gain/loss recursion for ``horizon`` steps.

    Local steps add this agent's own gains (minus coordination loss). At a
    step divisible by F the loss is suppressed and the round is replaced by
    the federated aggregate: I(t) = I(t - F) + |B| * (sum of the round's
    increments). Information is clamped at its ceiling.
    """
    if horizon < 0:
        raise ConfigError("horizon must be >= 0")
    lam = learn_fn(p.lambda_fn)
    n = horizon + 1
    i_env = np.empty(n)
    i_star = np.empty(n)
    gain_env = np.zeros(n)
    gain_star = np.zeros(n)
    loss_star = np.zeros(n)
    federated = np.zeros(n, dtype=bool)
    i_env[0], i_star[0] = p.i_env0, p.i_star0
    round_env = round_star = 0.0
    start_env, start_star = p.i_env0, p.i_star0
    nb = p.n_neighbors
    for t in range(1, n):
        ge = p.k_env * lam(p.c_env - i_env[t - 1])
        gs = p.k_star * lam(p.c_star - i_star[t - 1])
        fed = t % p.period_F == 0
        loss = 0.0
        if with_loss and not fed and nb > 0:
            total = i_env[t - 1] + nb * i_star[t - 1]
            drift = nb * gs
            if total + drift > 0:
                loss = drift / (total + drift) * i_star[t - 1]
        round_env += ge
        round_star += gs - loss
        if fed:
            e = start_env + p.n_agents * round_env
            s = start_star + p.n_agents * round_star
            round_env = round_star = 0.0
        else:
            e = i_env[t - 1] + ge
            s = i_star[t - 1] + gs - loss
        i_env[t] = min(e, p.c_env)
        i_star[t] = min(s, p.c_star)
        if fed:
            start_env, start_star = i_env[t], i_star[t]
        gain_env[t], gain_star[t], loss_star[t], federated[t] = ge, gs, loss, fed
    return InfoTrajectory(i_env, i_star, gain_env, gain_star, loss_star, federated)


def geometric_closed_form(c: float, i0: float, rate: float, t) -> np.ndarray:
    """C - (1 - rate)^t (C - I0)."""
    return c - (1.0 - rate) ** np.asarray(t, dtype=float) * (c - i0)


# closed-form bounds ----------------------------------------------------------


def alpha_coefficient(p: InfoParams) -> float:
    """Per-step contraction of missing coordinating information inside a round."""
    nb = max(p.n_neighbors, 1)
    return p.k_star * (1.0 - p.i_star0 / (p.c_env / nb + p.k_star * p.c_star + p.c_star))


def round_bracket(p: InfoParams) -> float:
    """|B| [(1 - K)(1 - (1 - alpha)^(F - 1)) + K]: fraction of the gap closed per round."""
    a = alpha_coefficient(p)
    k = p.k_star
    return p.n_agents * ((1.0 - k) * (1.0 - (1.0 - a) ** (p.period_F - 1)) + k)


def _checked_bracket(p: InfoParams) -> float:
    b = round_bracket(p)
    if not 0 < b < 1:
        raise ValidityError(f"round bracket {b:.6g} outside (0, 1); the bound is undefined")
    return b


def closed_form_I(p: InfoParams, t: float) -> float:
    """Upper envelope of I_star after floor(t / F) completed federated rounds."""
    if t < 0:
        raise ValueError("t must be >= 0")
    b = _checked_bracket(p)
    rounds = math.floor(t / p.period_F)
    return p.i_star0 + (1.0 - (1.0 - b) ** rounds) * (p.c_star - p.i_star0)


def bound_t_star(p: InfoParams, ceil_to_round: bool = False) -> float:
    """Steps for the coordinating information to reach (1 - epsilon) C_star.

    Real-valued; ``ceil_to_round`` rounds up to a whole number of rounds.
    """
    b = _checked_bracket(p)
    gap = p.c_star - p.i_star0
    if gap <= 0:
        return 0.0
    ratio = p.c_star * p.epsilon / gap
    if ratio >= 1:
        return 0.0
    t = p.period_F * math.log(ratio) / math.log(1.0 - b)
    return p.period_F * math.ceil(t / p.period_F) if ceil_to_round else t


def bound_t_env(p: InfoParams) -> float:
    """Steps for local information to reach (1 - epsilon) C_env."""
    base = 1.0 - p.n_agents * p.k_env
    if not 0 < base < 1:
        raise ValidityError(f"log base 1 - |B| K_env = {base:.6g} outside (0, 1)")
    gap = p.c_env - p.i_env0
    if gap <= 0:
        return 0.0
    ratio = p.c_env * p.epsilon / gap
    if ratio >= 1:
        return 0.0
    return math.log(ratio) / math.log(base)


def convergence_bound(p: InfoParams) -> float:
    return max(bound_t_star(p), bound_t_env(p))


def period_is_small(p: InfoParams) -> bool:
    """F should stay well below (C_star - I_star(0)) / K_star."""
    if p.k_star == 0:
        return True
    return p.period_F < (p.c_star - p.i_star0) / p.k_star


# sweeps ------------------------------------------------------------------------

SWEEP_HEADER = ("k_star", "F", "t_star", "t_env", "bound", "valid")


@dataclass(frozen=True)
class SweepRow:
    k_star: float
    F: int
    t_star: float
    t_env: float
    bound: float
    valid: str  # "true", "false" or "warn"
    note: str = field(default="", compare=False)

    def as_csv(self) -> List[str]:
        def fmt(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

        return [repr(float(self.k_star)), str(self.F), fmt(self.t_star), fmt(self.t_env), fmt(self.bound), self.valid]


def evaluate_point(p: InfoParams) -> SweepRow:
    nan = float("nan")
    try:
        t_star = bound_t_star(p)
        t_env = bound_t_env(p)
    except ValidityError as exc:
        return SweepRow(p.k_star, p.period_F, nan, nan, nan, "false", str(exc))
    valid = "true" if period_is_small(p) else "warn"
    return SweepRow(p.k_star, p.period_F, t_star, t_env, max(t_star, t_env), valid)


def sweep(p_base: InfoParams, k_star_grid: Iterable[float], f_grid: Iterable[int]) -> List[SweepRow]:
    """One row per (k_star, F), k_star-major in the given grid order.

    A grid point whose parameters are rejected outright is recorded as an
    invalid row rather than raising.
    """
    ks = list(k_star_grid)
    fs = list(f_grid)
    if not ks or not fs:
        raise ConfigError("sweep grids must be non-empty")
    rows = []
    nan = float("nan")
    for k in ks:
        for f in fs:
            try:
                p = replace(p_base, k_star=float(k), period_F=int(f))
            except ConfigError as exc:
                rows.append(SweepRow(float(k), int(f), nan, nan, nan, "false", str(exc)))
                continue
            rows.append(evaluate_point(p))
    return rows


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def reference_params(**overrides) -> InfoParams:
    """The reference setting: ceilings 0.1, ten agents, I(0) = 0.01, epsilon = 0.001."""
    base = dict(n_agents=10, n_neighbors=9, c_env=0.1, c_star=0.1, i_env0=0.01, i_star0=0.01, epsilon=0.001)
    base.update(overrides)
    return InfoParams(**base)


def reference_k_grid(n: int = 20) -> np.ndarray:
    return np.linspace(0.001, 0.02, n)
