"""Co-training of the controller (and optionally the metric) on l1 + nu * l2.

l1 is the norm of the closed-loop vector field at the target equilibrium and
l2 the hinge on the Gershgorin row margins of the certificate. Gradients of l2
with respect to the controller weights are exact subgradients through the
interval propagation; metric parameters, when trained, use central differences
of the full loss.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import certify, ncm
from .nn import MlpGrads, MlpParams, backprop, forward_cached
from .systems import Box, SystemModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    rho: float = 0.1
    nu: float = 1.0
    lr: float = 1e-3
    epochs: int = 20000
    seed: int = 0
    domain: Box | None = None
    grid_tau: float = 0.01
    x_star: np.ndarray | None = None
    optimizer: str = "adam"
    target_l1: float = 1e-4
    log_every: int = 100
    convention: str = "lenient"
    train_metric: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fd_step: float = 1e-5

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.convention not in certify.CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")


@dataclass
class HistoryRow:
    epoch: int
    l1: float
    l2: float
    total: float


@dataclass
class TrainResult:
    controller: MlpParams
    metric: ncm.NcmParams
    history: list[HistoryRow] = field(default_factory=list)
    converged: bool = False
    epochs_run: int = 0

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "l1", "l2", "total"])
            for row in self.history:
                w.writerow([row.epoch, repr(row.l1), repr(row.l2), repr(row.total)])


def loss_l1(sys: SystemModel, controller: MlpParams, x_star) -> float:
    """||f(x*) + g u(x*)||."""
    cache = forward_cached(controller, x_star)
    return float(np.linalg.norm(sys.vector_field(x_star, cache.u)))


def loss_l1_grad(sys: SystemModel, controller: MlpParams, x_star) -> tuple[float, MlpGrads]:
    cache = forward_cached(controller, x_star)
    r = sys.vector_field(x_star, cache.u)
    norm = float(np.linalg.norm(r))
    cot = sys.g.T @ r / norm if norm > 0 else np.zeros(sys.m)
    return norm, backprop(controller, x_star, cot, cache)


def loss_l2(row_margins) -> float:
    """sum_i max(0, -margin_i)."""
    return float(np.sum(np.maximum(0.0, -np.asarray(row_margins, dtype=float))))


def l2_and_grad(
    sys: SystemModel,
    controller: MlpParams,
    phi: ncm.NcmParams,
    eta: float,
    domain: Box,
    tau: float,
    convention: str = "lenient",
) -> tuple[float, np.ndarray, MlpGrads]:
    """l2, the row margins and the l2 subgradient with respect to the controller weights."""
    bounds, back_bounds = certify.lhs_bounds(sys, phi, controller, domain, tau, convention)
    margins, back_margins = certify.gershgorin_margins_vjp(bounds, certify.shift_for(eta, convention))
    l2 = loss_l2(margins)
    gm = np.where(margins < 0, -1.0, 0.0)
    g_lo, g_hi = back_margins(gm)
    gws, g_wo = back_bounds(g_lo, g_hi)
    grads = MlpGrads(gws, [np.zeros_like(b) for b in controller.biases], g_wo)
    return l2, margins, grads


class _Adam:
    def __init__(self, size: int, cfg: TrainConfig):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        if c.optimizer == "sgd":
            return -c.lr * grad
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1**self.t)
        v_hat = self.v / (1 - c.beta2**self.t)
        return -c.lr * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def _total_loss(sys, controller, phi, cfg, domain, x_star) -> float:
    eta = certify.compute_eta(sys, phi, cfg.rho, domain, cfg.grid_tau).eta
    l2, _, _ = l2_and_grad(sys, controller, phi, eta, domain, cfg.grid_tau, cfg.convention)
    return loss_l1(sys, controller, x_star) + cfg.nu * l2


def train(sys: SystemModel, controller: MlpParams, phi: ncm.NcmParams, cfg: TrainConfig) -> TrainResult:
    """Minimize l1 + nu * l2; stops early once l1 < target_l1 and l2 == 0."""
    domain = cfg.domain or sys.domain
    x_star = np.zeros(sys.n) if cfg.x_star is None else np.asarray(cfg.x_star, dtype=float)
    ctrl = controller.copy()
    phi = phi.copy()
    learn_phi = cfg.train_metric and phi.mode != "identity"
    theta = ctrl.to_vector()
    phi_vec = phi.to_vector()
    opt = _Adam(theta.size + (phi_vec.size if learn_phi else 0), cfg)
    eta_fixed = None if learn_phi else certify.compute_eta(sys, phi, cfg.rho, domain, cfg.grid_tau).eta
    result = TrainResult(ctrl, phi)

    for epoch in range(1, cfg.epochs + 1):
        eta = eta_fixed if eta_fixed is not None else certify.compute_eta(sys, phi, cfg.rho, domain, cfg.grid_tau).eta
        l1, g1 = loss_l1_grad(sys, ctrl, x_star)
        l2, _, g2 = l2_and_grad(sys, ctrl, phi, eta, domain, cfg.grid_tau, cfg.convention)
        total = l1 + cfg.nu * l2
        if not math.isfinite(total):
            raise TrainingError(f"non-finite loss at epoch {epoch}: l1={l1}, l2={l2}")
        done = l1 < cfg.target_l1 and l2 == 0.0
        if done or epoch % cfg.log_every == 0 or epoch == 1 or epoch == cfg.epochs:
            result.history.append(HistoryRow(epoch, l1, l2, total))
            log.debug("epoch %d l1 %.3e l2 %.3e", epoch, l1, l2)
        result.epochs_run = epoch
        if done:
            result.converged = True
            break
        grad = g1.to_vector() + cfg.nu * g2.to_vector()
        if learn_phi:
            gphi = np.zeros_like(phi_vec)
            for k in range(phi_vec.size):
                e = np.zeros_like(phi_vec)
                e[k] = cfg.fd_step
                hi = _total_loss(sys, ctrl, phi.with_vector(phi_vec + e), cfg, domain, x_star)
                lo = _total_loss(sys, ctrl, phi.with_vector(phi_vec - e), cfg, domain, x_star)
                gphi[k] = (hi - lo) / (2 * cfg.fd_step)
            grad = np.concatenate([grad, gphi])
        step = opt.step(grad)
        theta = theta + step[: theta.size]
        ctrl = ctrl.with_vector(theta)
        if learn_phi:
            phi_vec = phi_vec + step[theta.size:]
            phi = phi.with_vector(phi_vec)

    result.controller = ctrl
    result.metric = phi
    return result
