"""Central-difference verification of the hand-written gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedcomp.marl.approximators import Approximator

STEP = 1e-5
MLP_TOLERANCE = 1e-4
LINEAR_TOLERANCE = 1e-10


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(|a|, |b|, 1): relative for large entries, absolute near zero."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def numeric_jacobian(
    approx: Approximator, params: np.ndarray, x: np.ndarray, h: float = STEP, fn=None, chunk: int = 128
) -> np.ndarray:
    """(outputs, P) Jacobian by central differences; coordinates are perturbed
    one at a time but evaluated together in stacks of ``chunk``."""
    fn = fn or approx.forward
    params = np.asarray(params, dtype=float)
    x = np.asarray(x, dtype=float)
    n = params.size
    # divide by the step actually taken after rounding, not the nominal one
    width = (params + h) - (params - h)
    cols = []
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        rows = np.arange(len(idx))
        hi = np.tile(params, (len(idx), 1))
        lo = hi.copy()
        hi[rows, idx] += h
        lo[rows, idx] -= h
        xs = np.broadcast_to(x, (len(idx),) + x.shape)
        cols.append((fn(hi, xs) - fn(lo, xs)) / width[idx, None])
    return np.concatenate(cols).T


@dataclass(frozen=True)
class GradCheckResult:
    kind: str
    max_error: float
    tolerance: float
    n_points: int

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def grad_check(approx: Approximator, params: np.ndarray, x: np.ndarray, h: float = STEP, features: bool = False) -> float:
    """Max relative error between analytic and numeric Jacobians at one input.

    ``features`` checks the representation gradient instead of the output.
    """
    fwd = approx.features if features else approx.forward
    back = approx.features_vjp if features else approx.vjp
    x = np.asarray(x, dtype=float)
    width = fwd(params, x).shape[-1]
    # one backward pass per output, run as a stack of identical parameter copies
    analytic = back(np.broadcast_to(params, (width, params.size)), np.broadcast_to(x, (width,) + x.shape), np.eye(width))
    numeric = numeric_jacobian(approx, params, x, h, fwd)
    return float(relative_error(analytic, numeric).max())


def kink_distance(approx: Approximator, params: np.ndarray, x: np.ndarray) -> float:
    """Smallest |pre-activation| over hidden units; inf for linear kinds."""
    if approx.kind == "linear":
        return float("inf")
    pre = approx._trace(np.asarray(params, dtype=float), np.asarray(x, dtype=float)[None, :])[2][:-1]
    return float(min(np.abs(z).min() for z in pre))


def run_grad_check(
    approx: Approximator, rng: np.random.Generator, n_points: int = 100, h: float = STEP, kink_margin: float = 1e-3
) -> GradCheckResult:
    """Worst error over random parameter draws and random inputs.

    Points where a hidden unit sits within ``kink_margin`` of its rectifier
    kink are redrawn: there a difference quotient straddles a
    non-differentiable point and measures nothing about the backward pass.
    """
    worst = 0.0
    done = 0
    while done < n_points:
        params = approx.init(rng)
        params = params + 0.1 * rng.standard_normal(approx.n_params)
        x = rng.standard_normal(approx.n_in)
        if kink_distance(approx, params, x) < kink_margin:
            continue
        worst = max(worst, grad_check(approx, params, x, h))
        done += 1
    tol = LINEAR_TOLERANCE if approx.kind == "linear" else MLP_TOLERANCE
    return GradCheckResult(approx.kind, worst, tol, n_points)
