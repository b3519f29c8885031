"""Slope-restricted MLP controller: forward pass, input Jacobian and reverse-mode gradients.

The network is u(x) = Wo z_N with z_i = act(W_i z_{i-1} + b_i) and z_0 = x.
The activation is a smoothed leaky ReLU whose slope lies in (alpha, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import DimensionError

_SOFTPLUS_SWITCH = 30.0


def softplus(x):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|); the tail term underflows harmlessly past the switch
    tail = np.where(ax > _SOFTPLUS_SWITCH, np.exp(-ax), np.log1p(np.exp(-np.minimum(ax, _SOFTPLUS_SWITCH))))
    return np.maximum(x, 0.0) + tail


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def act(x, alpha: float):
    """alpha * x + (1 - alpha) * log(1 + e^x)."""
    return alpha * np.asarray(x, dtype=float) + (1.0 - alpha) * softplus(x)


def act_slope(x, alpha: float):
    """Derivative of :func:`act`; always inside (alpha, 1)."""
    return alpha + (1.0 - alpha) * sigmoid(x)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    wo: np.ndarray
    alpha: float

    def __post_init__(self):
        self.weights = [np.array(w, dtype=float, ndmin=2) for w in self.weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in self.biases]
        self.wo = np.array(self.wo, dtype=float, ndmin=2)
        self.alpha = float(self.alpha)
        if not self.weights:
            raise DimensionError("controller needs at least one hidden layer")
        if len(self.weights) != len(self.biases):
            raise DimensionError("one bias per hidden layer required")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        prev = self.weights[0].shape[1]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != prev or b.shape[0] != w.shape[0]:
                raise DimensionError(f"layer {i + 1} shapes W{w.shape}, b{b.shape} do not chain")
            prev = w.shape[0]
        if self.wo.shape[1] != prev:
            raise DimensionError(f"output weight {self.wo.shape} does not match width {prev}")
        for a in [*self.weights, *self.biases, self.wo]:
            if not np.all(np.isfinite(a)):
                raise ValueError("controller parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.wo.shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def slope_lo(self) -> float:
        return self.alpha

    @property
    def slope_hi(self) -> float:
        return 1.0

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.wo.copy(), self.alpha)

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: W_1, b_1, ..., W_N, b_N, Wo."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        out.append(self.wo)
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        new = self.copy()
        pos = 0
        for a in new.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        if pos != vec.size:
            raise DimensionError(f"vector length {vec.size} != parameter count {pos}")
        return new

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "Wo": self.wo.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MlpParams":
        try:
            layers = doc["layers"]
            return cls([l["W"] for l in layers], [l["b"] for l in layers], doc["Wo"], doc["alpha"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed controller document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "MlpParams":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    wo: np.ndarray

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        parts.append(self.wo.ravel())
        return np.concatenate(parts)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # z_{i-1} fed into layer i
    pre: list[np.ndarray] = field(default_factory=list)  # W_i z_{i-1} + b_i
    out: np.ndarray | None = None  # z_N
    u: np.ndarray | None = None


def init_params(n_in: int, hidden: list[int], n_out: int, alpha: float, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for every array."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = n_in
    for width in hidden:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(width, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=width))
        fan_in = width
    bound = 1.0 / np.sqrt(fan_in)
    wo = rng.uniform(-bound, bound, size=(n_out, fan_in))
    return MlpParams(weights, biases, wo, alpha)


def _check_input(p: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != p.n_in:
        raise DimensionError(f"state has dimension {x.shape[0]}, controller expects {p.n_in}")
    return x


def forward_cached(p: MlpParams, x) -> ForwardCache:
    z = _check_input(p, x)
    cache = ForwardCache()
    for w, b in zip(p.weights, p.biases):
        cache.inputs.append(z)
        s = w @ z + b
        cache.pre.append(s)
        z = act(s, p.alpha)
    cache.out = z
    cache.u = p.wo @ z
    return cache


def forward(p: MlpParams, x) -> np.ndarray:
    return forward_cached(p, x).u


def forward_batch(p: MlpParams, xs) -> np.ndarray:
    """Controls for a stack of states (rows); shape (k, m)."""
    z = np.asarray(xs, dtype=float)
    for w, b in zip(p.weights, p.biases):
        z = act(z @ w.T + b, p.alpha)
    return z @ p.wo.T


def input_jacobian(p: MlpParams, x, cache: ForwardCache | None = None) -> np.ndarray:
    """Exact du/dx = Wo J_N W_N ... J_1 W_1 with J_i = diag(act'(pre_i))."""
    if cache is None:
        cache = forward_cached(p, x)
    t = None
    for w, s in zip(p.weights, cache.pre):
        t = w if t is None else w @ t
        t = act_slope(s, p.alpha)[:, None] * t
    return p.wo @ t


def input_jacobian_batch(p: MlpParams, xs) -> np.ndarray:
    """Jacobians for a stack of states; shape (k, m, n)."""
    xs = np.asarray(xs, dtype=float)
    k = xs.shape[0]
    z = xs
    t = np.broadcast_to(np.eye(p.n_in), (k, p.n_in, p.n_in))
    for w, b in zip(p.weights, p.biases):
        s = z @ w.T + b
        t = act_slope(s, p.alpha)[:, :, None] * np.einsum("ij,kjl->kil", w, t)
        z = act(s, p.alpha)
    return np.einsum("ij,kjl->kil", p.wo, t)


def backprop(p: MlpParams, x, cotangent, cache: ForwardCache | None = None) -> MlpGrads:
    """Gradients of cotangent^T u(x) with respect to every parameter."""
    if cache is None:
        cache = forward_cached(p, x)
    cot = np.asarray(cotangent, dtype=float).reshape(-1)
    if cot.shape[0] != p.n_out:
        raise DimensionError(f"cotangent has dimension {cot.shape[0]}, controller outputs {p.n_out}")
    g_wo = np.outer(cot, cache.out)
    delta = p.wo.T @ cot  # d/dz_N
    gw: list[np.ndarray] = [None] * p.depth  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * p.depth  # type: ignore[list-item]
    for i in reversed(range(p.depth)):
        ds = delta * act_slope(cache.pre[i], p.alpha)
        gw[i] = np.outer(ds, cache.inputs[i])
        gb[i] = ds
        delta = p.weights[i].T @ ds
    return MlpGrads(gw, gb, g_wo)
