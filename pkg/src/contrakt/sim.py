"""Closed-loop simulation with fixed-step RK4, rate estimation and CSV/SVG output."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .nn import MlpParams, forward
from .systems import SystemModel

DIVERGENCE_NORM = 1e6

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass
class Trajectory:
    times: np.ndarray  # (k,)
    states: np.ndarray  # (k, n)
    controls: np.ndarray  # (k, m)
    diverged: bool = False

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def divergence_time(self) -> float | None:
        return float(self.times[-1]) if self.diverged else None


def as_policy(controller) -> Policy:
    """Wrap MlpParams (or any callable, or None for zero input) as x -> u."""
    if controller is None:
        return lambda x: np.zeros(1)
    if isinstance(controller, MlpParams):
        return lambda x: forward(controller, x)
    return lambda x: np.atleast_1d(np.asarray(controller(x), dtype=float))


def rollout(sys: SystemModel, controller, x0, T: float, dt: float = 1e-2) -> Trajectory:
    """Classical RK4; the controller is re-evaluated at every stage state.

    Integration stops early, with ``diverged`` set, once ||x|| exceeds 1e6 or
    the state stops being finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("T must be at least one step")
    policy = as_policy(controller)
    steps = int(round(T / dt))

    def field(x):
        return sys.f(x) + sys.g @ policy(x)

    x = np.asarray(x0, dtype=float).copy()
    times = [0.0]
    states = [x.copy()]
    controls = [policy(x)]
    diverged = False
    for k in range(1, steps + 1):
        k1 = field(x)
        k2 = field(x + 0.5 * dt * k1)
        k3 = field(x + 0.5 * dt * k2)
        k4 = field(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            diverged = True
            break
        times.append(k * dt)
        states.append(x.copy())
        controls.append(policy(x))
    return Trajectory(np.array(times), np.array(states), np.array(controls), diverged)


def estimate_rate(traj: Trajectory, x_star, window: tuple[float, float]) -> float:
    """Negated least-squares slope of log ||x(t) - x*|| over the time window."""
    t0, t1 = window
    if not t1 > t0:
        raise ValueError("empty rate window")
    sel = (traj.times >= t0 - 1e-12) & (traj.times <= t1 + 1e-12)
    if np.count_nonzero(sel) < 2:
        raise ValueError("window contains fewer than two samples")
    dist = np.linalg.norm(traj.states[sel] - np.asarray(x_star, dtype=float), axis=1)
    if dist[0] <= 1e-9 or np.any(dist <= 0):
        raise ValueError("trajectory already sits at the equilibrium; rate undefined")
    t = traj.times[sel]
    slope = np.polyfit(t, np.log(dist), 1)[0]
    return float(-slope)


def ball_samples(center, radius: float, k: int, seed: int) -> np.ndarray:
    """k points uniform in the Euclidean ball around center."""
    center = np.asarray(center, dtype=float)
    n = center.size
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(k, n))
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    r = radius * rng.uniform(size=(k, 1)) ** (1.0 / n)
    return center + r * d


def batch_rollouts(sys, controller, n_init: int, radius: float, seed: int, T: float, dt: float = 1e-2, x_star=None) -> list[Trajectory]:
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    x_star = np.zeros(sys.n) if x_star is None else np.asarray(x_star, dtype=float)
    starts = ball_samples(x_star, radius, n_init, seed)
    return [rollout(sys, controller, x0, T, dt) for x0 in starts]


def _columns(traj: Trajectory) -> dict[str, np.ndarray]:
    cols = {"time": traj.times}
    for i in range(traj.states.shape[1]):
        cols[f"x{i + 1}"] = traj.states[:, i]
    for i in range(traj.controls.shape[1]):
        cols[f"u{i + 1}"] = traj.controls[:, i]
    return cols


def emit_csv(trajs: Sequence[Trajectory], path) -> None:
    if not trajs:
        raise ValueError("no trajectories to write")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    header = list(_columns(trajs[0])) + ["traj_id"]
    w.writerow(header)
    for tid, traj in enumerate(trajs):
        cols = _columns(traj)
        for k in range(traj.times.size):
            w.writerow([repr(float(cols[h][k])) for h in header[:-1]] + [tid])
    Path(path).write_text(buf.getvalue(), newline="")


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def emit_svg(trajs: Sequence[Trajectory], axes: Sequence[str], path, title: str = "") -> None:
    """Line plot of axes[1] against axes[0] (names: time, x1.., u1..), one <path> per trajectory."""
    if not trajs:
        raise ValueError("no trajectories to plot")
    if len(axes) != 2:
        raise ValueError("axes must name exactly two quantities, e.g. ('time', 'x1')")
    xk, yk = axes
    series = []
    for traj in trajs:
        cols = _columns(traj)
        if xk not in cols or yk not in cols:
            raise ValueError(f"unknown axis name; available: {sorted(cols)}")
        series.append((cols[xk], cols[yk]))
    xs = np.concatenate([s[0] for s in series])
    ys = np.concatenate([s[1] for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    width, height, pad = 640.0, 400.0, 50.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0f}" height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 12:.1f}" text-anchor="middle" font-size="14">{xk}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="14" transform="rotate(-90 14 {height / 2:.1f})">{yk}</text>',
        f'<text x="{pad}" y="{height - pad + 16:.1f}" font-size="10">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16:.1f}" font-size="10" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{pad - 4}" y="{height - pad:.1f}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4:.1f}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>')
    for i, (sx, sy) in enumerate(series):
        pts = " L".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(sx, sy))
        out.append(f'<path d="M{pts}" fill="none" stroke="{_PALETTE[i % len(_PALETTE)]}" stroke-width="1.2"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """max_t ||x_a(t) - x_b(t)|| over the common time span."""
    k = min(a.times.size, b.times.size)
    return float(np.max(np.linalg.norm(a.states[:k] - b.states[:k], axis=1)))

