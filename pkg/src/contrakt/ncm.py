"""Neural contraction metrics M(x) = Gamma(x)^T Gamma(x) + eps I.

Every entry of Gamma depends on x only through the projections x^T v_l onto a
basis of Ker(g^T), so each gradient of M_ij lies in span{v_l} and d(M_ij)/dx . g = 0
holds identically. Three modes are supported:

* ``identity``  M = scale * I, no trainable parameters;
* ``log_cosh``  Gamma_ij = gamma_ij * log cosh(sum_l alpha_ijl x^T v_l + b_ij);
* ``general``   Gamma_ij = K_ij(sum_l beta_lij(x^T v_l)) with one-hidden-layer
  tanh networks K_ij and beta_lij.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ibp import MatrixBounds
from .linalg import null_space_basis
from .systems import Box, SystemModel

MODES = ("identity", "log_cosh", "general")
LIPSCHITZ_SAFETY = 1.5


def log_cosh(z):
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    return az + np.log1p(np.exp(-2.0 * az)) - np.log(2.0)


@dataclass
class NcmParams:
    mode: str
    epsilon: float = 0.1
    kernel_basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # rows v_l
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown metric mode {self.mode!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(self.epsilon)
        self.kernel_basis = np.array(self.kernel_basis, dtype=float, ndmin=2)
        self.params = {k: np.array(v, dtype=float) for k, v in self.params.items()}

    @property
    def n(self) -> int:
        return self.kernel_basis.shape[1]

    @property
    def scale(self) -> float:
        return float(self.params.get("scale", 1.0))

    def copy(self) -> "NcmParams":
        return NcmParams(self.mode, self.epsilon, self.kernel_basis.copy(), {k: v.copy() for k, v in self.params.items()})

    def trainable_keys(self) -> list[str]:
        if self.mode == "identity":
            return []
        return sorted(self.params)

    def to_vector(self) -> np.ndarray:
        keys = self.trainable_keys()
        if not keys:
            return np.zeros(0)
        return np.concatenate([self.params[k].ravel() for k in keys])

    def with_vector(self, vec) -> "NcmParams":
        new = self.copy()
        pos = 0
        for k in self.trainable_keys():
            size = new.params[k].size
            new.params[k] = np.asarray(vec[pos:pos + size], dtype=float).reshape(new.params[k].shape)
            pos += size
        return new

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "dim": self.n,
            "epsilon": self.epsilon,
            "kernel_basis": self.kernel_basis.tolist(),
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NcmParams":
        try:
            basis = np.array(doc["kernel_basis"], dtype=float).reshape(-1, int(doc["dim"]))
            return cls(doc["mode"], doc["epsilon"], basis, doc.get("params", {}))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed metric document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "NcmParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def _basis_for(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    basis = null_space_basis(g)
    if not basis:
        raise ValueError("g has a trivial left kernel; a state-dependent metric cannot satisfy the PDE")
    return np.array(basis)


def identity_metric(n: int, scale: float = 1.0, epsilon: float = 0.1) -> NcmParams:
    return NcmParams("identity", epsilon, np.zeros((0, n)), {"scale": np.array(scale)})


def init_log_cosh(g, seed: int, epsilon: float = 0.1, scale: float = 1.0) -> NcmParams:
    g = np.atleast_2d(np.asarray(g, dtype=float))
    basis = _basis_for(g)
    n, r = g.shape[0], basis.shape[0]
    rng = np.random.default_rng(seed)
    return NcmParams(
        "log_cosh",
        epsilon,
        basis,
        {
            "gamma": scale * rng.uniform(-1.0, 1.0, (n, n)),
            "alpha": rng.uniform(-1.0, 1.0, (n, n, r)),
            "bias": rng.uniform(-1.0, 1.0, (n, n)),
        },
    )


def init_general(g, seed: int, hidden: int = 4, epsilon: float = 0.1) -> NcmParams:
    g = np.atleast_2d(np.asarray(g, dtype=float))
    basis = _basis_for(g)
    n, r = g.shape[0], basis.shape[0]
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-1.0, 1.0, shape)  # noqa: E731
    return NcmParams(
        "general",
        epsilon,
        basis,
        {
            # beta_lij(t) = sum_h beta_out * tanh(beta_w * t + beta_b)
            "beta_w": u(n, n, r, hidden),
            "beta_b": u(n, n, r, hidden),
            "beta_out": u(n, n, r, hidden) / np.sqrt(hidden),
            # K_ij(s) = sum_h k_out * tanh(k_w * s + k_b)
            "k_w": u(n, n, hidden),
            "k_b": u(n, n, hidden),
            "k_out": u(n, n, hidden) / np.sqrt(hidden),
        },
    )


def gamma_batch(phi: NcmParams, xs) -> tuple[np.ndarray, np.ndarray]:
    """Gamma(x) and dGamma/dx for a stack of states: shapes (k, n, n), (k, n, n, n)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    k = xs.shape[0]
    n = phi.n
    if phi.mode == "identity":
        return np.zeros((k, n, n)), np.zeros((k, n, n, n))
    v = phi.kernel_basis  # (r, n)
    y = xs @ v.T  # (k, r)
    p = phi.params
    if phi.mode == "log_cosh":
        z = np.einsum("ijl,kl->kij", p["alpha"], y) + p["bias"]
        gam = p["gamma"] * log_cosh(z)
        direction = np.einsum("ijl,ln->ijn", p["alpha"], v)  # dz_ij/dx
        dgam = (p["gamma"] * np.tanh(z))[..., None] * direction
        return gam, dgam
    # general
    inner = p["beta_w"][None] * y[:, None, None, :, None] + p["beta_b"][None]  # (k, n, n, r, h)
    th = np.tanh(inner)
    beta_val = np.sum(p["beta_out"] * th, axis=-1)  # (k, n, n, r)
    beta_der = np.sum(p["beta_out"] * p["beta_w"] * (1.0 - th * th), axis=-1)
    s = beta_val.sum(axis=-1)  # (k, n, n)
    kin = p["k_w"][None] * s[..., None] + p["k_b"][None]
    kt = np.tanh(kin)
    gam = np.sum(p["k_out"] * kt, axis=-1)
    k_der = np.sum(p["k_out"] * p["k_w"] * (1.0 - kt * kt), axis=-1)
    dgam = k_der[..., None] * np.einsum("kijl,ln->kijn", beta_der, v)
    return gam, dgam


def ncm_eval_batch(phi: NcmParams, xs) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = phi.n
    if phi.mode == "identity":
        return np.broadcast_to(phi.scale * np.eye(n), (xs.shape[0], n, n)).copy()
    gam, _ = gamma_batch(phi, xs)
    return np.einsum("kai,kaj->kij", gam, gam) + phi.epsilon * np.eye(n)


def ncm_grad_batch(phi: NcmParams, xs) -> np.ndarray:
    """dM_ij/dx for a stack of states, shape (k, n, n, n); last axis is the state coordinate."""
    gam, dgam = gamma_batch(phi, xs)
    # M_ij = sum_a G_ai G_aj
    return np.einsum("kain,kaj->kijn", dgam, gam) + np.einsum("kai,kajn->kijn", gam, dgam)


def ncm_eval(phi: NcmParams, x) -> np.ndarray:
    return ncm_eval_batch(phi, np.asarray(x, dtype=float)[None])[0]


def ncm_grad(phi: NcmParams, x) -> np.ndarray:
    """Gradient rows of every entry: out[i, j] = d M_ij / dx."""
    return ncm_grad_batch(phi, np.asarray(x, dtype=float)[None])[0]


def mdot_eval(phi: NcmParams, sys: SystemModel, x, u) -> np.ndarray:
    """Entries dM_ij/dx . (f(x) + g u)."""
    return ncm_grad(phi, x) @ sys.vector_field(x, u)


def mdot_batch(phi: NcmParams, sys: SystemModel, xs) -> np.ndarray:
    # g-term vanishes by construction, so u = 0 is used
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    fs = np.array([sys.f(x) for x in xs])
    return np.einsum("kijn,kn->kij", ncm_grad_batch(phi, xs), fs)


def _lipschitz_from_grid(values: np.ndarray, axes: list[np.ndarray]) -> np.ndarray:
    """Per-entry Lipschitz estimate from neighbour difference quotients on a tensor grid.

    ``values`` has shape (*grid_shape, n, n). Returns an (n, n) array.
    """
    sq = np.zeros(values.shape[len(axes):])
    for d, ax in enumerate(axes):
        if ax.size < 2:
            continue
        h = ax[1] - ax[0]
        q = np.abs(np.diff(values, axis=d)) / h
        sq += np.max(q.reshape(-1, *sq.shape), axis=0) ** 2
    return np.sqrt(sq)


def ncm_bounds(phi: NcmParams, domain: Box, tau: float) -> MatrixBounds:
    """Element-wise bounds of M(x) over the box: grid extremes widened by L_ij * tau."""
    n = phi.n
    if phi.mode == "identity":
        return MatrixBounds.point(phi.scale * np.eye(n))
    pts = domain.grid(tau)
    m = ncm_eval_batch(phi, pts)
    lip = LIPSCHITZ_SAFETY * np.max(np.linalg.norm(ncm_grad_batch(phi, pts), axis=-1), axis=0)
    return MatrixBounds(m.min(axis=0) - lip * tau, m.max(axis=0) + lip * tau)


def mdot_bounds(phi: NcmParams, sys: SystemModel, domain: Box, tau: float) -> MatrixBounds:
    """Element-wise bounds of Mdot(x) over the box (independent of the control)."""
    n = phi.n
    if phi.mode == "identity":
        return MatrixBounds.point(np.zeros((n, n)))
    axes = domain.axes(tau)
    pts = domain.grid(tau)
    md = mdot_batch(phi, sys, pts)
    lip = LIPSCHITZ_SAFETY * _lipschitz_from_grid(md.reshape(*[a.size for a in axes], n, n), axes)
    return MatrixBounds(md.min(axis=0) - lip * tau, md.max(axis=0) + lip * tau)
