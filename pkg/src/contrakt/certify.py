"""Gershgorin-based contraction certificate for the closed loop, plus sampled cross-checks.

Two sign conventions are available for folding the scalar eta = -(c1 + c2)
into the row test:

``lenient`` margin_i = -sum_j - 2 U_ii - eta, the same row inequality the training
            loss drives to zero. It accepts the reference experiments but does
            not imply the sampled contraction inequality.
``sound``   margin_i = -sum_j - 2 U_ii + eta, i.e. the Gershgorin test with shift
            c1 + c2; with Mdot halved in the bounds this implies
            Mdot + Sym[M (df + g du)] + 2 rho M <= 0 on the whole box.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ibp, ncm
from .ibp import MatrixBounds
from .linalg import DimensionError, as_matrix, sym_eig_max, sym_eig_max_batch
from .nn import MlpParams, forward, input_jacobian_batch
from .systems import Box, SystemModel

log = logging.getLogger(__name__)

CONVENTIONS = ("lenient", "sound")
LIPSCHITZ_SAFETY = 1.5


class PreconditionError(ValueError):
    """The closed loop does not have the requested equilibrium."""


@dataclass
class EtaResult:
    eta: float
    c1: float
    c2: float
    grid_tau: float
    grid_points: int
    max_eig_m: float
    max_eig_sym: float
    s_m: float
    s_df: float
    l_m: float
    l_df: float

    @property
    def lipschitz_c2(self) -> float:
        return 2.0 * (self.s_m * self.l_df + self.s_df * self.l_m)


@dataclass
class CertificateReport:
    eta: float
    c1: float
    c2: float
    row_margins: list[float]
    passed: bool
    rho: float
    oracle_min_margin: float
    grid_tau: float
    convention: str = "lenient"
    equilibrium_residual: float = 0.0
    lipschitz: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["pass"] = doc.pop("passed")
        return doc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))


def _row_terms(b: MatrixBounds):
    lo, hi = b.lo, b.hi
    n = lo.shape[0]
    if lo.shape != (n, n):
        raise DimensionError(f"Gershgorin test needs square bounds, got {lo.shape}")
    sl = np.abs(lo + lo.T)
    su = np.abs(hi + hi.T)
    off = np.where(np.eye(n, dtype=bool), 0.0, np.maximum(sl, su))
    return off.sum(axis=1), np.diag(hi)


def gershgorin_check(b: MatrixBounds, shift: float) -> tuple[bool, np.ndarray]:
    """Row margins -sum_{j!=i} max(|L_ij+L_ji|, |U_ij+U_ji|) - 2 U_ii - shift.

    All margins >= 0 guarantees Y + Y^T <= -shift I for every Y inside the bounds.
    """
    radius, diag = _row_terms(b)
    margins = -radius - 2.0 * diag - shift
    return bool(np.all(margins >= 0)), margins


def gershgorin_margins_vjp(b: MatrixBounds, shift: float):
    """Margins and a closure mapping d/dmargins to (d/dlo, d/dhi).

    Ties between the |L| and |U| branches route to the |L| branch.
    """
    _, margins = gershgorin_check(b, shift)
    lo, hi = b.lo, b.hi
    n = lo.shape[0]
    sl = lo + lo.T
    su = hi + hi.T
    use_lo = np.abs(sl) >= np.abs(su)
    offdiag = ~np.eye(n, dtype=bool)

    def backward(gm):
        gm = np.asarray(gm, dtype=float)
        # d margin_i / d s_ij = -sign(s_ij) for the selected branch, j != i
        coef = -gm[:, None] * offdiag
        g_sl = np.where(use_lo, coef * np.sign(sl), 0.0)
        g_su = np.where(use_lo, 0.0, coef * np.sign(su))
        g_lo = g_sl + g_sl.T
        g_hi = g_su + g_su.T
        g_hi[np.diag_indices(n)] += -2.0 * gm
        return g_lo, g_hi

    return margins, backward


def shift_for(eta: float, convention: str) -> float:
    if convention == "lenient":
        return eta
    if convention == "sound":
        return -eta
    raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")


def _grid_lipschitz(values: np.ndarray, axes: list[np.ndarray]) -> float:
    # values: (*grid_shape, a, b); Frobenius norm of neighbour differences bounds the 2-norm
    total = 0.0
    for d, ax in enumerate(axes):
        if ax.size < 2:
            continue
        diff = np.diff(values, axis=d)
        q = np.sqrt(np.sum(diff * diff, axis=(-2, -1))) / (ax[1] - ax[0])
        total += float(np.max(q)) ** 2
    return float(np.sqrt(total))


def _jac_batch(sys: SystemModel, pts: np.ndarray) -> np.ndarray:
    jac = np.array([sys.jac_f(x) for x in pts])
    if not np.all(np.isfinite(jac)):
        raise ValueError("dynamics Jacobian is not finite on the grid")
    return jac


def compute_eta(sys: SystemModel, phi: ncm.NcmParams, rho: float, domain: Box | None = None, tau: float = 0.05) -> EtaResult:
    """c1 >= 2 rho sup lambda_max(M), c2 >= sup lambda_max(Sym[M df]) via grid maxima plus Lipschitz margins."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    domain = domain or sys.domain
    axes = domain.axes(tau)
    shape = [a.size for a in axes]
    pts = domain.grid(tau)
    jac = _jac_batch(sys, pts)
    m = ncm.ncm_eval_batch(phi, pts)
    mj = m @ jac
    max_eig_m = float(np.max(sym_eig_max_batch(m)))
    max_eig_sym = float(np.max(sym_eig_max_batch(mj + np.swapaxes(mj, 1, 2))))
    s_m = LIPSCHITZ_SAFETY * max_eig_m
    s_df = LIPSCHITZ_SAFETY * float(np.sqrt(np.max(sym_eig_max_batch(np.swapaxes(jac, 1, 2) @ jac))))
    n = sys.n
    l_df = LIPSCHITZ_SAFETY * _grid_lipschitz(jac.reshape(*shape, n, n), axes)
    l_m = 0.0 if phi.mode == "identity" else LIPSCHITZ_SAFETY * _grid_lipschitz(m.reshape(*shape, n, n), axes)
    c1 = 2.0 * rho * (max_eig_m + l_m * tau)
    c2 = max_eig_sym + 2.0 * (s_m * l_df + s_df * l_m) * tau
    return EtaResult(
        eta=-(c1 + c2),
        c1=c1,
        c2=c2,
        grid_tau=tau,
        grid_points=pts.shape[0],
        max_eig_m=max_eig_m,
        max_eig_sym=max_eig_sym,
        s_m=s_m,
        s_df=s_df,
        l_m=l_m,
        l_df=l_df,
    )


def lhs_bounds(sys: SystemModel, phi: ncm.NcmParams, controller: MlpParams, domain: Box, tau: float, convention: str):
    m_b = ncm.ncm_bounds(phi, domain, tau)
    md_b = ncm.mdot_bounds(phi, sys, domain, tau)
    if convention == "sound":
        # Y + Y^T with Y = M g du + Mdot/2 reproduces Mdot + Sym[M g du]
        md_b = md_b.scale(0.5)
    return ibp.closed_loop_bounds_vjp(m_b, sys.g, controller, md_b)


def sampled_contraction_margin(sys: SystemModel, phi: ncm.NcmParams, controller: MlpParams | None, rho: float, samples) -> float:
    """min over samples of -lambda_max(Mdot + Sym[M (df + g du)] + 2 rho M)."""
    xs = np.atleast_2d(np.asarray(samples, dtype=float))
    jac = _jac_batch(sys, xs)
    if controller is not None:
        jac = jac + sys.g[None] @ input_jacobian_batch(controller, xs)
    m = ncm.ncm_eval_batch(phi, xs)
    # Mdot does not depend on u, so the open-loop field is used
    md = ncm.mdot_batch(phi, sys, xs)
    mj = m @ jac
    q = md + mj + np.swapaxes(mj, 1, 2) + 2.0 * rho * m
    return float(np.min(-sym_eig_max_batch(q)))


def robust_check(m, jac_est, mdot, lam: float, c: float, rho: float) -> float:
    """-lambda_max(Mdot + Sym[M J] + lam^2 M^T M + (c / lam^2) I + rho M) for an uncertain Jacobian J + Delta, Delta^T Delta <= c I."""
    if lam == 0:
        raise ValueError("lambda must be non-zero")
    if c < 0:
        raise ValueError("c must be non-negative")
    m = as_matrix(m)
    j = as_matrix(jac_est)
    md = as_matrix(mdot)
    n = m.shape[0]
    mj = m @ j
    q = md + mj + mj.T + lam**2 * (m.T @ m) + (c / lam**2) * np.eye(n) + rho * m
    return -sym_eig_max(q)


def equilibrium_residual(sys: SystemModel, controller: MlpParams | None, x_star) -> float:
    x_star = np.asarray(x_star, dtype=float)
    u = np.zeros(sys.m) if controller is None else forward(controller, x_star)
    return float(np.linalg.norm(sys.vector_field(x_star, u)))


def certify(
    sys: SystemModel,
    phi: ncm.NcmParams,
    controller: MlpParams,
    rho: float,
    domain: Box | None = None,
    tau: float = 0.05,
    x_star=None,
    convention: str = "lenient",
    oracle_samples: int = 1000,
    seed: int = 0,
    eq_tol: float = 1e-4,
    eta: EtaResult | None = None,
) -> CertificateReport:
    domain = domain or sys.domain
    x_star = np.zeros(sys.n) if x_star is None else np.asarray(x_star, dtype=float)
    residual = equilibrium_residual(sys, controller, x_star)
    if residual > eq_tol:
        raise PreconditionError(f"||f(x*) + g u(x*)|| = {residual:.3e} exceeds {eq_tol:.1e}")
    if eta is None:
        eta = compute_eta(sys, phi, rho, domain, tau)
    bounds, _ = lhs_bounds(sys, phi, controller, domain, tau, convention)
    passed, margins = gershgorin_check(bounds, shift_for(eta.eta, convention))
    rng = np.random.default_rng(seed)
    oracle = sampled_contraction_margin(sys, phi, controller, rho, domain.sample(rng, oracle_samples))
    log.info("certificate %s: margins %s, eta %.4f, oracle %.4f", "pass" if passed else "fail", margins, eta.eta, oracle)
    return CertificateReport(
        eta=eta.eta,
        c1=eta.c1,
        c2=eta.c2,
        row_margins=[float(v) for v in margins],
        passed=passed,
        rho=rho,
        oracle_min_margin=oracle,
        grid_tau=tau,
        convention=convention,
        equilibrium_residual=residual,
        lipschitz={"S_M": eta.s_m, "S_df": eta.s_df, "L_M": eta.l_m, "L_df": eta.l_df, "safety": LIPSCHITZ_SAFETY},
    )

