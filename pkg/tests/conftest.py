import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from contrakt import ncm, nn, sim, systems, train

PENDULUM_TARGET = np.array([math.pi / 4, 0.0])
INVERTED_TARGET = np.array([2.0, 0.0])


@dataclass
class Experiment:
    result: train.TrainResult
    trajs: list
    artifacts: dict[str, bytes] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _artifacts(outdir: Path, result, trajs, axes) -> dict[str, bytes]:
    outdir.mkdir(parents=True, exist_ok=True)
    result.controller.save(outdir / "controller.json")
    result.write_history(outdir / "history.csv")
    sim.emit_csv(trajs, outdir / "trajectories.csv")
    sim.emit_svg(trajs, axes, outdir / "trajectories.svg")
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}


def run_pendulum(seed: int, outdir: Path) -> Experiment:
    t0 = time.perf_counter()
    s = systems.pendulum()
    ctrl = nn.init_params(2, [32], 1, 0.3, seed)
    cfg = train.TrainConfig(rho=0.1, lr=1e-3, epochs=20000, seed=seed, grid_tau=0.01, x_star=PENDULUM_TARGET)
    result = train.train(s, ctrl, ncm.identity_metric(2), cfg)
    trajs = sim.batch_rollouts(s, result.controller, 20, 1.0, seed, 10.0, 1e-2, PENDULUM_TARGET)
    return Experiment(result, trajs, _artifacts(outdir, result, trajs, ("x1", "x2")), {"seconds": time.perf_counter() - t0})


def run_inverted(seed: int, outdir: Path) -> Experiment:
    s = systems.inverted_pendulum()
    ctrl = nn.init_params(2, [32], 1, 0.2, seed)
    cfg = train.TrainConfig(rho=0.5, lr=1e-3, epochs=20000, seed=seed, grid_tau=0.01, x_star=INVERTED_TARGET)
    result = train.train(s, ctrl, ncm.identity_metric(2), cfg)
    trajs = sim.batch_rollouts(s, result.controller, 20, 1.0, seed, 10.0, 1e-2, INVERTED_TARGET)
    return Experiment(result, trajs, _artifacts(outdir, result, trajs, ("time", "x1")))


def run_roa(seed: int, outdir: Path) -> Experiment:
    s = systems.andrieu3()
    ctrl = nn.init_params(3, [64], 1, 0.3, seed)
    cfg = train.TrainConfig(rho=0.1, lr=1e-3, epochs=2000, seed=seed, grid_tau=0.5)
    result = train.train(s, ctrl, ncm.identity_metric(3), cfg)
    lqr = systems.lqr_controller(s, r=np.eye(1), q=np.eye(3))
    runs = {
        "nn_small": sim.rollout(s, result.controller, [0.5, 0.5, 0.5], 10.0),
        "lqr_small": sim.rollout(s, lqr, [0.5, 0.5, 0.5], 10.0),
        "nn_large": sim.rollout(s, result.controller, [10.0, 10.0, 10.0], 10.0),
        "lqr_large": sim.rollout(s, lqr, [10.0, 10.0, 10.0], 10.0),
    }
    trajs = list(runs.values())
    return Experiment(result, trajs, _artifacts(outdir, result, trajs, ("time", "x1")), {"runs": runs, "lqr": lqr})


@pytest.fixture(scope="session")
def pendulum_run(tmp_path_factory) -> Experiment:
    return run_pendulum(0, tmp_path_factory.mktemp("pendulum"))


@pytest.fixture(scope="session")
def inverted_run(tmp_path_factory) -> Experiment:
    return run_inverted(0, tmp_path_factory.mktemp("inverted"))


@pytest.fixture(scope="session")
def roa_run(tmp_path_factory) -> Experiment:
    return run_roa(0, tmp_path_factory.mktemp("roa"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
