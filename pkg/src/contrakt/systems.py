"""Benchmark control-affine systems x' = f(x) + g u and the LQR baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import linalg

GRAVITY = 9.81
MASS = 0.15
LENGTH = 0.5
FRICTION = 0.1


@dataclass(frozen=True)
class Box:
    """Axis-aligned state domain."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ValueError("box bounds must be non-empty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box must have finite extents")
        if np.any(hi <= lo):
            raise ValueError("box is empty or degenerate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "Box":
        pairs = np.asarray(pairs, dtype=float)
        return cls(pairs[:, 0], pairs[:, 1])

    @property
    def dim(self) -> int:
        return self.lo.size

    def to_pairs(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def axes(self, tau: float) -> list[np.ndarray]:
        """Per-axis samples whose tensor grid covers the box within radius ``tau``.

        Cell spacing is at most 2 tau / sqrt(n), so every point of the box lies
        within tau (Euclidean) of its nearest grid node. Interval counts are
        powers of two, which makes the grid for tau/2 a refinement of the grid for tau.
        """
        if tau <= 0:
            raise ValueError("grid spacing must be positive")
        h = 2.0 * tau / math.sqrt(self.dim)
        out = []
        for a, b in zip(self.lo, self.hi):
            cells = 1 << max(0, math.ceil(math.log2((b - a) / h)))
            out.append(np.linspace(a, b, cells + 1))
        return out

    def grid(self, tau: float) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(tau), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(k, self.dim))


@dataclass(frozen=True)
class SystemModel:
    name: str
    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    jac_f: Callable[[np.ndarray], np.ndarray]
    g: np.ndarray
    domain: Box

    def vector_field(self, x, u) -> np.ndarray:
        return self.f(np.asarray(x, dtype=float)) + self.g @ np.atleast_1d(np.asarray(u, dtype=float))


def _pendulum(sign: float, name: str) -> SystemModel:
    ml2 = MASS * LENGTH**2
    mgl = MASS * GRAVITY * LENGTH

    def f(x):
        return np.array([x[1], (-sign * mgl * math.sin(x[0]) - FRICTION * x[1]) / ml2])

    def jac_f(x):
        return np.array([[0.0, 1.0], [-sign * (GRAVITY / LENGTH) * math.cos(x[0]), -FRICTION / ml2]])

    return SystemModel(
        name=name,
        n=2,
        m=1,
        f=f,
        jac_f=jac_f,
        g=np.array([[0.0], [1.0 / ml2]]),
        domain=Box([-math.pi, -4.0], [math.pi, 4.0]),
    )


def pendulum() -> SystemModel:
    return _pendulum(1.0, "pendulum")


def inverted_pendulum() -> SystemModel:
    """Same as :func:`pendulum` with the sign of the gravity term flipped."""
    return _pendulum(-1.0, "inverted_pendulum")


def andrieu3() -> SystemModel:
    def f(x):
        x1, x2, x3 = x
        return np.array([-x1 + x3, x1 * x1 - x2 - 2.0 * x1 * x3 + x3, -x2])

    def jac_f(x):
        x1, _, x3 = x
        return np.array([[-1.0, 0.0, 1.0], [2.0 * x1 - 2.0 * x3, -1.0, -2.0 * x1 + 1.0], [0.0, -1.0, 0.0]])

    return SystemModel(
        name="andrieu3",
        n=3,
        m=1,
        f=f,
        jac_f=jac_f,
        g=np.array([[0.0], [0.0], [1.0]]),
        domain=Box([-12.0] * 3, [12.0] * 3),
    )


def linear_system(a, g, domain: Box | None = None, name: str = "linear") -> SystemModel:
    """x' = A x + g u; handy for tests and sanity checks."""
    a = linalg.as_matrix(a, "A")
    g = linalg.as_matrix(g, "g")
    n = a.shape[0]
    return SystemModel(
        name=name,
        n=n,
        m=g.shape[1],
        f=lambda x: a @ np.asarray(x, dtype=float),
        jac_f=lambda x: a.copy(),
        g=g,
        domain=domain or Box([-1.0] * n, [1.0] * n),
    )


REGISTRY: dict[str, Callable[[], SystemModel]] = {
    "pendulum": pendulum,
    "inverted_pendulum": inverted_pendulum,
    "andrieu3": andrieu3,
}


def get_system(name: str) -> SystemModel:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(REGISTRY)}") from None


def equilibrium_input(sys: SystemModel, x_star) -> np.ndarray:
    """Least-squares u* with f(x*) + g u* = 0 (exact when the residual is in range(g))."""
    u, *_ = np.linalg.lstsq(sys.g, -sys.f(np.asarray(x_star, dtype=float)), rcond=None)
    return u


@dataclass(frozen=True)
class LqrController:
    gain: np.ndarray  # K, u = -K (x - x_lin)
    p: np.ndarray
    x_lin: np.ndarray
    residual: float

    def __call__(self, x) -> np.ndarray:
        return -self.gain @ (np.asarray(x, dtype=float) - self.x_lin)


def lqr_controller(sys: SystemModel, x_lin=None, r=None, q=None) -> LqrController:
    """u = -R^-1 B^T P x for the linearization A = df/dx(x_lin), B = g."""
    x_lin = np.zeros(sys.n) if x_lin is None else np.asarray(x_lin, dtype=float)
    q = np.eye(sys.n) if q is None else linalg.as_matrix(q)
    r = np.eye(sys.m) if r is None else linalg.as_matrix(r)
    a = sys.jac_f(x_lin)
    p = linalg.solve_care(a, sys.g, q, r)
    gain = np.linalg.solve(r, sys.g.T @ p)
    return LqrController(gain=gain, p=p, x_lin=x_lin, residual=linalg.care_residual(a, sys.g, q, r, p))
