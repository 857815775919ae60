"""Linear and small rectifier-MLP approximators with hand-written gradients.

Parameters are flat float64 vectors. The layout is layer-major; each
weight matrix is stored row-major as (fan_in, fan_out) and is followed by
its bias. The linear kind has a single weight matrix and no bias (add a
constant feature when an intercept is wanted).

Every method accepts either one parameter vector ``(P,)`` or a stack of them
``(A, P)``, one per agent. Inputs carry the same leading axes as the
parameters plus an optional batch axis: ``(K,)`` / ``(B, K)`` for a single
vector, ``(A, K)`` / ``(A, B, K)`` for a stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from fedcomp.errors import ConfigError

KINDS = ("linear", "mlp")


def _lift(params: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Insert a batch axis when the input has none; report whether we did."""
    x = np.asarray(x, dtype=float)
    if x.ndim == params.ndim:
        return x[..., None, :], True
    if x.ndim == params.ndim + 1:
        return x, False
    raise ValueError(f"input of rank {x.ndim} does not fit parameters of rank {params.ndim}")


@dataclass(frozen=True)
class Approximator:
    """Shape description of a function approximator; holds no parameters."""

    kind: str
    n_in: int
    n_out: int
    hidden: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_in < 1 or self.n_out < 1:
            raise ConfigError("n_in and n_out must be >= 1")
        if self.kind == "linear" and self.hidden:
            raise ConfigError("linear approximators have no hidden layers")
        if self.kind == "mlp" and (not self.hidden or min(self.hidden) < 1):
            raise ConfigError("mlp needs at least one hidden layer of width >= 1")

    @classmethod
    def linear(cls, n_in: int, n_out: int) -> "Approximator":
        return cls("linear", n_in, n_out)

    @classmethod
    def mlp(cls, n_in: int, n_out: int, hidden=(32, 32)) -> "Approximator":
        return cls("mlp", n_in, n_out, tuple(int(h) for h in hidden))

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.n_in,) + self.hidden + (self.n_out,)

    @property
    def n_features(self) -> int:
        """Width of the representation fed to the final layer (or the outputs, for linear)."""
        return self.hidden[-1] if self.kind == "mlp" else self.n_out

    def layer_shapes(self) -> List[Tuple[Tuple[int, int], Tuple[int, ...]]]:
        """(weight shape, bias shape) per layer; linear has an empty bias."""
        s = self.sizes
        if self.kind == "linear":
            return [((s[0], s[1]), ())]
        return [((s[k], s[k + 1]), (s[k + 1],)) for k in range(len(s) - 1)]

    @property
    def n_params(self) -> int:
        return sum(a * b + (c[0] if c else 0) for (a, b), c in self.layer_shapes())

    def init(self, rng: np.random.Generator, n_agents: int = None, scale: float = 1.0) -> np.ndarray:
        """He-scaled normal weights, zero biases; linear kinds start at zero."""
        lead = () if n_agents is None else (n_agents,)
        if self.kind == "linear":
            return np.zeros(lead + (self.n_params,))
        parts = []
        for (fan_in, fan_out), bias in self.layer_shapes():
            w = rng.standard_normal(lead + (fan_in, fan_out)) * (scale * np.sqrt(2.0 / fan_in))
            parts.append(w.reshape(lead + (-1,)))
            parts.append(np.zeros(lead + bias))
        return np.concatenate(parts, axis=-1)

    def unflatten(self, params: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Views of (W, b) per layer; b is None for the linear kind."""
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape[-1]}")
        lead = params.shape[:-1]
        out, pos = [], 0
        for (fan_in, fan_out), bias in self.layer_shapes():
            w = params[..., pos : pos + fan_in * fan_out].reshape(lead + (fan_in, fan_out))
            pos += fan_in * fan_out
            b = None
            if bias:
                b = params[..., pos : pos + bias[0]]
                pos += bias[0]
            out.append((w, b))
        return out

    @staticmethod
    def flatten(layers) -> np.ndarray:
        parts = []
        for w, b in layers:
            parts.append(w.reshape(w.shape[:-2] + (-1,)))
            if b is not None:
                parts.append(b)
        return np.concatenate(parts, axis=-1)

    # forward pass -------------------------------------------------------

    def _trace(self, params: np.ndarray, x: np.ndarray):
        """Layer inputs and pre-activations of the batched forward pass."""
        layers = self.unflatten(params)
        inputs, pre = [x], []
        h = x
        for k, (w, b) in enumerate(layers):
            z = h @ w
            if b is not None:
                z = z + b[..., None, :]
            pre.append(z)
            h = np.maximum(z, 0.0) if k < len(layers) - 1 else z
            if k < len(layers) - 1:
                inputs.append(h)
        return layers, inputs, pre

    def forward(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if self.kind == "linear":
            w = params.reshape(params.shape[:-1] + (self.n_in, self.n_out))
            if params.ndim == 1:
                return np.asarray(x, dtype=float) @ w
            return np.einsum("a...k,ako->a...o", np.asarray(x, dtype=float), w)
        xb, lifted = _lift(params, x)
        out = self._trace(params, xb)[2][-1]
        return out[..., 0, :] if lifted else out

    def features(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Representation before the softmax head: last hidden layer (mlp) or the outputs (linear)."""
        params = np.asarray(params, dtype=float)
        if self.kind == "linear":
            return self.forward(params, x)
        xb, lifted = _lift(params, x)
        h = self._trace(params, xb)[1][-1]
        return h[..., 0, :] if lifted else h

    # reverse mode -------------------------------------------------------

    def _backward(self, params, x, g, stop: int) -> np.ndarray:
        """Gradient of <g, layer output> w.r.t. params, where the output is taken
        after layer ``stop`` (the network output when stop is the last index)."""
        params = np.asarray(params, dtype=float)
        xb, lifted = _lift(params, x)
        gb = np.asarray(g, dtype=float)
        if lifted:
            gb = gb[..., None, :]
        layers, inputs, pre = self._trace(params, xb)
        grads = [(np.zeros_like(w), None if b is None else np.zeros_like(b)) for w, b in layers]
        last = len(layers) - 1
        delta = gb
        if stop < last:
            delta = gb * (pre[stop] > 0)
        for k in range(stop, -1, -1):
            w, b = layers[k]
            gw = np.swapaxes(inputs[k], -1, -2) @ delta
            gb_k = None if b is None else delta.sum(axis=-2)
            grads[k] = (gw, gb_k)
            if k > 0:
                delta = (delta @ np.swapaxes(w, -1, -2)) * (pre[k - 1] > 0)
        return self.flatten(grads)

    def vjp(self, params: np.ndarray, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """d<g, forward(params, x)>/d params, summed over any batch axis."""
        params = np.asarray(params, dtype=float)
        if self.kind == "linear":
            x = np.asarray(x, dtype=float)
            g = np.asarray(g, dtype=float)
            if x.ndim == params.ndim:
                return (x[..., :, None] * g[..., None, :]).reshape(params.shape)
            return np.einsum("...bk,...bo->...ko", x, g).reshape(params.shape)
        return self._backward(params, x, g, len(self.sizes) - 2)

    def features_vjp(self, params: np.ndarray, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """d<g, features(params, x)>/d params; the head layer receives zero gradient."""
        if self.kind == "linear":
            return self.vjp(params, x, g)
        return self._backward(params, x, g, len(self.sizes) - 3)

    def jacobian(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """(n_out, P) Jacobian at a single unbatched input."""
        eye = np.eye(self.n_out)
        return np.stack([self.vjp(params, x, eye[o]) for o in range(self.n_out)])
