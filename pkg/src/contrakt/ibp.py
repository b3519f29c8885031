"""Element-wise interval bounds for matrix products and the controller Jacobian.

Each propagation step also has a ``*_vjp`` twin that returns the bounds together
with a closure mapping cotangents on (lo, hi) back to cotangents on the inputs.
The bounds are piecewise-linear in the weights, so these are exact gradients
away from sign changes and min/max ties (ties route to the first argument).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import DimensionError, as_matrix
from .nn import MlpParams


@dataclass(frozen=True)
class MatrixBounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = as_matrix(self.lo, "lo")
        hi = as_matrix(self.hi, "hi")
        if lo.shape != hi.shape:
            raise DimensionError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, m) -> "MatrixBounds":
        m = as_matrix(m)
        return cls(m.copy(), m.copy())

    @property
    def shape(self) -> tuple[int, int]:
        return self.lo.shape

    def __add__(self, other: "MatrixBounds") -> "MatrixBounds":
        return MatrixBounds(self.lo + other.lo, self.hi + other.hi)

    def scale(self, k: float) -> "MatrixBounds":
        if k >= 0:
            return MatrixBounds(k * self.lo, k * self.hi)
        return MatrixBounds(k * self.hi, k * self.lo)

    def contains(self, m, atol: float = 0.0) -> bool:
        m = as_matrix(m)
        return bool(np.all(m >= self.lo - atol) and np.all(m <= self.hi + atol))

    def width(self) -> np.ndarray:
        return self.hi - self.lo


Backward = Callable[[np.ndarray, np.ndarray], tuple]


def left_multiply_vjp(q: MatrixBounds, w) -> tuple[MatrixBounds, Backward]:
    w = as_matrix(w, "W")
    if w.shape[1] != q.shape[0]:
        raise DimensionError(f"left_multiply: W{w.shape} cannot multiply bounds {q.shape}")
    pos = w >= 0
    wp = np.where(pos, w, 0.0)
    wn = np.where(pos, 0.0, w)
    lo = wp @ q.lo + wn @ q.hi
    hi = wp @ q.hi + wn @ q.lo

    def backward(gl, gh):
        gw = np.where(pos, gl @ q.lo.T + gh @ q.hi.T, gl @ q.hi.T + gh @ q.lo.T)
        g_lo = wp.T @ gl + wn.T @ gh
        g_hi = wn.T @ gl + wp.T @ gh
        return g_lo, g_hi, gw

    return MatrixBounds(lo, hi), backward


def left_multiply(q: MatrixBounds, w) -> MatrixBounds:
    """Bounds on W Q for every Q between q.lo and q.hi."""
    return left_multiply_vjp(q, w)[0]


def slope_scale_vjp(p: MatrixBounds, a: float, b: float) -> tuple[MatrixBounds, Backward]:
    if not a > 0:
        raise ValueError(f"slope_scale needs a > 0, got {a}")
    if a > b:
        raise ValueError(f"slope_scale needs a <= b, got a={a}, b={b}")
    lo_coef = np.where(p.lo >= 0, a, b)
    hi_coef = np.where(p.hi < 0, a, b)

    def backward(gl, gh):
        return lo_coef * gl, hi_coef * gh

    return MatrixBounds(lo_coef * p.lo, hi_coef * p.hi), backward


def slope_scale(p: MatrixBounds, a: float, b: float) -> MatrixBounds:
    """Bounds on J P for diagonal J with entries in [a, b], 0 < a <= b."""
    return slope_scale_vjp(p, a, b)[0]


def interval_product_vjp(w: MatrixBounds, p: MatrixBounds) -> tuple[MatrixBounds, Backward]:
    if w.shape[1] != p.shape[0]:
        raise DimensionError(f"interval_product: bounds {w.shape} cannot multiply bounds {p.shape}")
    # corners per (i, k, j), ordered (Lw Lp, Lw Up, Uw Lp, Uw Up)
    wl, wh = w.lo[:, :, None], w.hi[:, :, None]
    pl, ph = p.lo[None, :, :], p.hi[None, :, :]
    corners = np.stack(np.broadcast_arrays(wl * pl, wl * ph, wh * pl, wh * ph))
    i_min = np.argmin(corners, axis=0)
    i_max = np.argmax(corners, axis=0)
    lo = np.take_along_axis(corners, i_min[None], 0)[0].sum(axis=1)
    hi = np.take_along_axis(corners, i_max[None], 0)[0].sum(axis=1)

    def backward(gl, gh):
        gl3 = gl[:, None, :]
        gh3 = gh[:, None, :]
        g_wl = np.zeros(corners.shape[1:])
        g_wh = np.zeros_like(g_wl)
        g_pl = np.zeros_like(g_wl)
        g_ph = np.zeros_like(g_wl)
        for idx, g in ((i_min, gl3), (i_max, gh3)):
            g = np.broadcast_to(g, idx.shape)
            use_wl = idx <= 1
            use_pl = (idx % 2) == 0
            wv = np.where(use_wl, wl, wh)
            pv = np.where(use_pl, pl, ph)
            g_wl += np.where(use_wl, g * pv, 0.0)
            g_wh += np.where(use_wl, 0.0, g * pv)
            g_pl += np.where(use_pl, g * wv, 0.0)
            g_ph += np.where(use_pl, 0.0, g * wv)
        return g_wl.sum(axis=2), g_wh.sum(axis=2), g_pl.sum(axis=0), g_ph.sum(axis=0)

    return MatrixBounds(lo, hi), backward


def interval_product(w: MatrixBounds, p: MatrixBounds) -> MatrixBounds:
    """Bounds on W P when both factors are only known element-wise.

    Every term W_ik P_kj is bounded by the extreme of its four corner products,
    then the terms are summed over k.
    """
    return interval_product_vjp(w, p)[0]


def jacobian_bounds_vjp(p: MlpParams) -> tuple[MatrixBounds, Callable]:
    """Bounds on du/dx valid for every state, plus a weight-gradient closure.

    The closure maps cotangents on the final (lo, hi) to ``(grads for W_1..W_N, grad for Wo)``.
    Biases do not enter the bounds.
    """
    q = MatrixBounds.point(np.eye(p.n_in))
    tape = []
    for w in p.weights:
        q, b1 = left_multiply_vjp(q, w)
        q, b2 = slope_scale_vjp(q, p.slope_lo, p.slope_hi)
        tape.append((b1, b2))
    q, bo = left_multiply_vjp(q, p.wo)

    def backward(gl, gh):
        gl, gh, g_wo = bo(gl, gh)
        gws = [None] * len(tape)
        for i in reversed(range(len(tape))):
            b1, b2 = tape[i]
            gl, gh = b2(gl, gh)
            gl, gh, gws[i] = b1(gl, gh)
        return gws, g_wo

    return q, backward


def jacobian_bounds(p: MlpParams) -> MatrixBounds:
    """Layer-by-layer slope scaling and products, closed by Wo, so the bounds cover Wo J_N W_N ... J_1 W_1."""
    return jacobian_bounds_vjp(p)[0]


def closed_loop_bounds_vjp(m_bounds: MatrixBounds, g, p: MlpParams, mdot_bounds: MatrixBounds):
    g = as_matrix(g, "g")
    n = g.shape[0]
    if m_bounds.shape != (n, n) or mdot_bounds.shape != (n, n):
        raise DimensionError(f"metric bounds must be {n}x{n}")
    if g.shape[1] != p.n_out or p.n_in != n:
        raise DimensionError(f"g{g.shape} incompatible with controller {p.n_in}->{p.n_out}")
    jb, back_jac = jacobian_bounds_vjp(p)
    inter, back_g = left_multiply_vjp(jb, g)
    theta, back_m = interval_product_vjp(m_bounds, inter)
    total = theta + mdot_bounds

    def backward(gl, gh):
        _, _, gpl, gph = back_m(gl, gh)
        gl2, gh2, _ = back_g(gpl, gph)
        return back_jac(gl2, gh2)

    return total, backward


def closed_loop_bounds(m_bounds: MatrixBounds, g, p: MlpParams, mdot_bounds: MatrixBounds) -> MatrixBounds:
    """Bounds on Mdot + M g du/dx: Jacobian bounds, times g, times the M bounds, plus Mdot."""
    return closed_loop_bounds_vjp(m_bounds, g, p, mdot_bounds)[0]
