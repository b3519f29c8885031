"""Small dense linear algebra: Jacobi eigenvalues, kernel bases, Lyapunov and CARE solvers.

Matrices here are at most ~10x10, so everything favours robustness over speed.
numpy arrays are used for storage; the decompositions themselves are written out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when matrix shapes are incompatible with an operation."""


class NotStabilizableError(RuntimeError):
    """Raised when the Riccati iteration fails to converge."""


@dataclass(frozen=True)
class SymEigResult:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns, matching eigenvalues

    @property
    def max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def min(self) -> float:
        return float(self.eigenvalues[0])


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def _rotation_tangent(app: float, aqq: float, apq: float) -> float:
    diff = aqq - app
    if abs(apq) < 1e-36 * abs(diff):
        # theta would overflow; t ~ 1 / (2 theta)
        return apq / diff
    theta = diff / (2.0 * apq)
    return math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))


def sym_eig(a, tol: float = 1e-12, max_sweeps: int = 100) -> SymEigResult:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (A + A^T)/2 before iterating. Sweeps continue
    until the off-diagonal Frobenius norm drops below ``tol`` (scaled by the
    matrix norm when that exceeds one).
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        if _off_norm(a) < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                t = _rotation_tangent(a[p, p], a[q, q], apq)
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) plane rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return SymEigResult(eigenvalues=w[order], eigenvectors=v[:, order])


def sym_eig_max(a) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    return sym_eig(a).max


def sym_eigvals_batch(a, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Ascending eigenvalues for a stack of symmetric matrices, shape (k, n, n) -> (k, n).

    Same cyclic Jacobi scheme as :func:`sym_eig`, vectorized over the stack.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise DimensionError(f"expected shape (k, n, n), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix stack has non-finite entries")
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    n = a.shape[1]
    scale = np.maximum(1.0, np.sqrt(np.sum(a * a, axis=(1, 2))))
    mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.where(mask, a, 0.0) ** 2, axis=(1, 2)))
        if np.all(off < tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                diff = a[:, q, q] - a[:, p, p]
                tiny = np.abs(apq) < 1e-36 * np.abs(diff)
                nz = (apq != 0.0) & ~tiny
                theta = diff / (2.0 * np.where(nz, apq, 1.0))
                t = np.where(nz, np.copysign(1.0, theta) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
                t = np.where(tiny, apq / np.where(tiny, diff, 1.0), t)
                c = (1.0 / np.sqrt(t * t + 1.0))[:, None]
                s = (t[:, None]) * c
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c * ap - s * aq
                a[:, :, q] = s * ap + c * aq
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c * rp - s * rq
                a[:, q, :] = s * rp + c * rq
                a[:, p, q] = 0.0
                a[:, q, p] = 0.0
    return np.sort(np.diagonal(a, axis1=1, axis2=2), axis=1)


def sym_eig_max_batch(a) -> np.ndarray:
    return sym_eigvals_batch(a)[:, -1]


def sym(a: np.ndarray) -> np.ndarray:
    """A + A^T (note: no factor 1/2)."""
    return a + a.T


def spectral_norm(a) -> float:
    a = as_matrix(a)
    return math.sqrt(max(sym_eig(a.T @ a).max, 0.0))


def null_space_basis(g, rel_tol: float = 1e-9) -> list[np.ndarray]:
    """Orthonormal basis of {v : v^T g = 0}.

    Columns of ``g`` are orthonormalized by Gram-Schmidt (pivots below
    ``rel_tol * max|g|`` count as rank-deficient), then standard basis vectors
    are projected off, always taking the one with the largest residual next.
    """
    g = as_matrix(g, "g")
    n = g.shape[0]
    scale = float(np.max(np.abs(g))) if g.size else 0.0
    cols: list[np.ndarray] = []
    for j in range(g.shape[1]):
        w = g[:, j].copy()
        for _ in range(2):
            for q in cols:
                w -= (q @ w) * q
        nw = float(np.linalg.norm(w))
        if scale > 0 and nw > rel_tol * scale:
            cols.append(w / nw)
    basis: list[np.ndarray] = []
    target = n - len(cols)
    while len(basis) < target:
        best, best_norm = None, 0.0
        for i in range(n):
            w = np.zeros(n)
            w[i] = 1.0
            for _ in range(2):
                for q in cols + basis:
                    w -= (q @ w) * q
            nw = float(np.linalg.norm(w))
            if nw > best_norm:
                best, best_norm = w, nw
        if best is None or best_norm < rel_tol:
            break
        basis.append(best / best_norm)
    return basis


def solve_lyapunov(a, q) -> np.ndarray:
    """Solve A^T P + P A + Q = 0 via Kronecker vectorization."""
    a = as_matrix(a, "A")
    q = as_matrix(q, "Q")
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise DimensionError(f"Lyapunov shapes A{a.shape}, Q{q.shape}")
    eye = np.eye(n)
    # column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    op = np.kron(eye, a.T) + np.kron(a.T, eye)
    p = np.linalg.solve(op, -q.flatten(order="F")).reshape((n, n), order="F")
    return 0.5 * (p + p.T)


def care_residual(a, b, q, r, p) -> float:
    a, b, q, r, p = (as_matrix(x) for x in (a, b, q, r, p))
    res = a.T @ p + p @ a - p @ b @ np.linalg.solve(r, b.T @ p) + q
    return float(np.max(np.abs(res)))


def _initial_gain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Bass's shift: with beta beyond the spectral radius, -(A + beta I) is Hurwitz and
    # (A + beta I) Z + Z (A + beta I)^T = 2 B B^T gives K0 = B^T Z^-1 with A - B K0 Hurwitz.
    n = a.shape[0]
    beta = float(np.linalg.norm(a)) + 1.0
    shifted = a + beta * np.eye(n)
    z = solve_lyapunov(shifted.T, -2.0 * b @ b.T)
    return b.T @ np.linalg.pinv(z)


def solve_care(a, b, q, r, max_iter: int = 200, tol: float = 1e-13) -> np.ndarray:
    """Stabilizing solution of A^T P + P A - P B R^-1 B^T P + Q = 0 (Kleinman-Newton)."""
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    q = as_matrix(q, "Q")
    r = as_matrix(r, "R")
    n = a.shape[0]
    m = b.shape[1]
    if a.shape != (n, n) or b.shape[0] != n or q.shape != (n, n) or r.shape != (m, m):
        raise DimensionError(f"CARE shapes A{a.shape}, B{b.shape}, Q{q.shape}, R{r.shape}")
    k = _initial_gain(a, b)
    p_prev = None
    for _ in range(max_iter):
        ak = a - b @ k
        p = solve_lyapunov(ak, q + k.T @ r @ k)
        if not np.all(np.isfinite(p)):
            break
        k = np.linalg.solve(r, b.T @ p)
        if p_prev is not None and np.max(np.abs(p - p_prev)) <= tol * max(1.0, float(np.max(np.abs(p)))):
            if np.max(np.linalg.eigvals(a - b @ k).real) >= 0:
                raise NotStabilizableError("Riccati iteration settled on a non-stabilizing solution; (A, B) is not stabilizable")
            return p
        p_prev = p
    else:
        raise NotStabilizableError(f"Kleinman iteration did not converge in {max_iter} steps")
    raise NotStabilizableError("Kleinman iteration diverged; (A, B) is likely not stabilizable")
