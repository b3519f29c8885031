"""Command-line entry point: ``contrakt {train,certify,simulate,bounds,lqr} --config run.json``.

Exit codes follow sysexits: 0 success, 1 check failed (certificate or LQR),
2 training ran out of epochs, 64 usage/config error, 66 unreadable input,
70 internal error. Relative paths inside a config resolve against the
config file's directory; ``--output`` resolves against the working directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certify, ibp, ncm, nn, sim, systems, train
from .linalg import NotStabilizableError

log = logging.getLogger("contrakt")

EX_OK = 0
EX_FAIL = 1
EX_UNCONVERGED = 2
EX_USAGE = 64
EX_NOINPUT = 66
EX_SOFTWARE = 70

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(ValueError):
    """Invalid run configuration (exit 64)."""


class InputError(OSError):
    """A referenced input file is missing or unreadable (exit 66)."""


_TRAIN_KEYS = {"rho", "nu", "lr", "epochs", "seed", "grid_tau", "target_l1", "log_every", "convention", "train_metric", "optimizer", "fd_step"}
_CERT_KEYS = {"rho", "grid_tau", "oracle_samples", "convention", "seed"}
_SIM_KEYS = {"T", "dt", "n_init", "radius", "seed", "controller", "axes", "rate_window", "x0"}
_TOP_KEYS = {"system", "controller_path", "ncm_path", "x_star", "domain", "controller", "metric", "train", "certify", "simulate", "lqr", "output_dir"}


def _section(doc: dict, name: str, allowed: set[str], defaults: dict) -> dict:
    sec = doc.get(name, {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    return {**defaults, **sec}


@dataclass
class RunConfig:
    system: str
    base_dir: Path = Path(".")
    controller_path: Path | None = None
    ncm_path: Path | None = None
    x_star: np.ndarray | None = None
    domain: systems.Box | None = None
    controller: dict = field(default_factory=lambda: {"hidden": [32], "alpha": 0.3})
    metric: dict = field(default_factory=lambda: {"mode": "identity", "scale": 1.0, "epsilon": 0.1})
    train: dict = field(default_factory=dict)
    certify: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    lqr: dict = field(default_factory=dict)
    output_dir: Path = Path("out")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path = Path(".")) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        name = doc.get("system")
        if not name:
            raise ConfigError("config is missing 'system'")
        if name not in systems.REGISTRY:
            raise ConfigError(f"unknown system {name!r}; choose from {sorted(systems.REGISTRY)}")
        sys_model = systems.get_system(name)

        def path(key):
            v = doc.get(key)
            return None if v is None else base_dir / v

        x_star = doc.get("x_star")
        if x_star is not None:
            x_star = np.asarray(x_star, dtype=float)
            if x_star.shape != (sys_model.n,):
                raise ConfigError(f"x_star must have {sys_model.n} entries")
        domain = None
        if doc.get("domain") is not None:
            try:
                domain = systems.Box.from_pairs(doc["domain"])
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"bad domain: {exc}") from exc
            if domain.dim != sys_model.n:
                raise ConfigError(f"domain must have {sys_model.n} intervals")

        ctrl = {"hidden": [32], "alpha": 0.3, **(doc.get("controller") or {})}
        metric = {"mode": "identity", "scale": 1.0, "epsilon": 0.1, "seed": 0, **(doc.get("metric") or {})}
        if metric["mode"] not in ncm.MODES:
            raise ConfigError(f"unknown metric mode {metric['mode']!r}")
        cfg = cls(
            system=name,
            base_dir=base_dir,
            controller_path=path("controller_path"),
            ncm_path=path("ncm_path"),
            x_star=x_star,
            domain=domain,
            controller=ctrl,
            metric=metric,
            train=_section(doc, "train", _TRAIN_KEYS, {}),
            certify=_section(doc, "certify", _CERT_KEYS, {"rho": 0.1, "grid_tau": 0.05, "oracle_samples": 1000, "convention": "lenient", "seed": 0}),
            simulate=_section(doc, "simulate", _SIM_KEYS, {"T": 10.0, "dt": 1e-2, "n_init": 20, "radius": 1.0, "seed": 0, "controller": "nn", "axes": ["x1", "x2"]}),
            lqr=_section(doc, "lqr", {"q", "r", "x_lin"}, {}),
            output_dir=base_dir / doc.get("output_dir", "out"),
        )
        if cfg.simulate["controller"] not in ("nn", "lqr", "none"):
            raise ConfigError("simulate.controller must be 'nn', 'lqr' or 'none'")
        if cfg.certify["convention"] not in certify.CONVENTIONS:
            raise ConfigError(f"unknown convention {cfg.certify['convention']!r}")
        for key in ("controller_path", "ncm_path"):
            p = getattr(cfg, key)
            if p is not None and not p.is_file():
                raise InputError(f"{key} {p} does not exist")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, path.parent)

    def with_seed(self, seed: int) -> "RunConfig":
        self.train["seed"] = seed
        self.certify["seed"] = seed
        self.simulate["seed"] = seed
        return self

    def system_model(self) -> systems.SystemModel:
        return systems.get_system(self.system)

    def target(self) -> np.ndarray:
        return np.zeros(self.system_model().n) if self.x_star is None else self.x_star


def _load_controller(cfg: RunConfig) -> nn.MlpParams:
    path = cfg.controller_path or cfg.output_dir / "controller.json"
    try:
        return nn.MlpParams.load(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load controller from {path}: {exc}") from exc


def _metric(cfg: RunConfig, sys_model: systems.SystemModel) -> ncm.NcmParams:
    if cfg.ncm_path is not None:
        try:
            return ncm.NcmParams.load(cfg.ncm_path)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot load metric from {cfg.ncm_path}: {exc}") from exc
    desc = cfg.metric
    if desc["mode"] == "identity":
        return ncm.identity_metric(sys_model.n, desc["scale"], desc["epsilon"])
    if desc["mode"] == "log_cosh":
        return ncm.init_log_cosh(sys_model.g, desc["seed"], desc["epsilon"])
    return ncm.init_general(sys_model.g, desc["seed"], epsilon=desc["epsilon"])


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def cmd_train(cfg: RunConfig) -> int:
    """Train a controller; writes controller.json, metric.json and history.csv."""
    sys_model = cfg.system_model()
    opts = dict(cfg.train)
    seed = int(opts.get("seed", 0))
    if cfg.controller_path is not None:
        controller = _load_controller(cfg)
    else:
        controller = nn.init_params(sys_model.n, list(cfg.controller["hidden"]), sys_model.m, float(cfg.controller["alpha"]), seed)
    phi = _metric(cfg, sys_model)
    try:
        tcfg = train.TrainConfig(domain=cfg.domain, x_star=cfg.x_star, **opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train section: {exc}") from exc
    result = train.train(sys_model, controller, phi, tcfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    result.controller.save(out / "controller.json")
    result.metric.save(out / "metric.json")
    result.write_history(out / "history.csv")
    last = result.history[-1]
    _write_json(out / "train_summary.json", {"converged": result.converged, "epochs_run": result.epochs_run, "l1": last.l1, "l2": last.l2})
    log.info("training %s after %d epochs (l1 %.3e, l2 %.3e)", "converged" if result.converged else "stopped", result.epochs_run, last.l1, last.l2)
    return EX_OK if result.converged else EX_UNCONVERGED


def cmd_certify(cfg: RunConfig) -> int:
    """Run the Gershgorin certificate; writes certificate.json."""
    sys_model = cfg.system_model()
    controller = _load_controller(cfg)
    phi = _metric(cfg, sys_model)
    c = cfg.certify
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = certify.certify(
            sys_model, phi, controller, float(c["rho"]), cfg.domain, float(c["grid_tau"]), cfg.x_star,
            c["convention"], int(c["oracle_samples"]), int(c["seed"]),
        )
    except certify.PreconditionError as exc:
        _write_json(out / "certificate.json", {"pass": False, "error": str(exc)})
        log.error("%s", exc)
        return EX_FAIL
    report.save(out / "certificate.json")
    print(json.dumps({"pass": report.passed, "eta": report.eta, "row_margins": report.row_margins}))
    return EX_OK if report.passed else EX_FAIL


def _policy(cfg: RunConfig, sys_model):
    kind = cfg.simulate["controller"]
    if kind == "nn":
        return _load_controller(cfg)
    if kind == "lqr":
        return _lqr(cfg, sys_model)
    return None


def cmd_simulate(cfg: RunConfig) -> int:
    """Roll out the closed loop; writes trajectories.csv/.svg and rates.json."""
    sys_model = cfg.system_model()
    s = cfg.simulate
    policy = _policy(cfg, sys_model)
    x_star = cfg.target()
    if s.get("x0") is not None:
        starts = np.atleast_2d(np.asarray(s["x0"], dtype=float))
        if starts.shape[1] != sys_model.n:
            raise ConfigError(f"simulate.x0 rows must have {sys_model.n} entries")
        trajs = [sim.rollout(sys_model, policy, x0, float(s["T"]), float(s["dt"])) for x0 in starts]
    else:
        trajs = sim.batch_rollouts(sys_model, policy, int(s["n_init"]), float(s["radius"]), int(s["seed"]), float(s["T"]), float(s["dt"]), x_star)
    window = tuple(s.get("rate_window") or (0.0, float(s["T"]) / 2))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    sim.emit_csv(trajs, out / "trajectories.csv")
    sim.emit_svg(trajs, list(s["axes"]), out / "trajectories.svg", title=sys_model.name)
    rows = []
    for i, t in enumerate(trajs):
        try:
            rate = None if t.diverged else sim.estimate_rate(t, x_star, window)
        except ValueError:
            rate = None
        rows.append({
            "traj_id": i,
            "x0": t.states[0].tolist(),
            "final_distance": float(np.linalg.norm(t.final - x_star)),
            "diverged": t.diverged,
            "divergence_time": t.divergence_time(),
            "rate": rate,
        })
    _write_json(out / "rates.json", rows)
    return EX_OK


def cmd_bounds(cfg: RunConfig) -> int:
    """Print element-wise bounds of the controller Jacobian as CSV."""
    controller = _load_controller(cfg)
    b = ibp.jacobian_bounds(controller)
    lines = ["i,j,lo,hi"]
    for i in range(b.lo.shape[0]):
        for j in range(b.lo.shape[1]):
            lines.append(f"{i},{j},{float(b.lo[i, j])!r},{float(b.hi[i, j])!r}")
    text = "\r\n".join(lines) + "\r\n"
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "bounds.csv").write_text(text, newline="")
    sys.stdout.write(text.replace("\r\n", "\n"))
    return EX_OK


def _lqr(cfg: RunConfig, sys_model) -> systems.LqrController:
    opts = cfg.lqr
    try:
        q = None if opts.get("q") is None else np.atleast_2d(np.asarray(opts["q"], dtype=float))
        r = None if opts.get("r") is None else np.atleast_2d(np.asarray(opts["r"], dtype=float))
        return systems.lqr_controller(sys_model, opts.get("x_lin"), r, q)
    except ValueError as exc:
        raise ConfigError(f"bad lqr section: {exc}") from exc


def cmd_lqr(cfg: RunConfig) -> int:
    """Solve the CARE at the linearization; writes lqr.json."""
    sys_model = cfg.system_model()
    try:
        ctrl = _lqr(cfg, sys_model)
    except NotStabilizableError as exc:
        log.error("%s", exc)
        return EX_FAIL
    closed = sys_model.jac_f(ctrl.x_lin) - sys_model.g @ ctrl.gain
    eig = np.linalg.eigvals(closed)
    hurwitz = bool(np.all(eig.real < 0))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "gain": ctrl.gain.tolist(),
        "p": ctrl.p.tolist(),
        "x_lin": ctrl.x_lin.tolist(),
        "residual": ctrl.residual,
        "closed_loop_eigenvalues": [[float(z.real), float(z.imag)] for z in sorted(eig, key=lambda z: (z.real, z.imag))],
        "hurwitz": hurwitz,
    }
    _write_json(out / "lqr.json", doc)
    print(json.dumps({"residual": ctrl.residual, "hurwitz": hurwitz}))
    return EX_OK if hurwitz else EX_FAIL


COMMANDS = {"train": cmd_train, "certify": cmd_certify, "simulate": cmd_simulate, "bounds": cmd_bounds, "lqr": cmd_lqr}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contrakt", description="Train, certify and simulate contraction-certified neural controllers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__, description=fn.__doc__)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--output", help="output directory, overrides output_dir")
        p.add_argument("--seed", type=int, help="overrides every seed in the config")
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("CONTRAKT_LOG", "error").lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"CONTRAKT_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=LOG_LEVELS[level_name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _setup_logging()
        cfg = RunConfig.load(args.config)
        if args.output is not None:
            cfg.output_dir = Path(args.output)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.with_seed(args.seed)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"contrakt: config error: {exc}", file=sys.stderr)
        return EX_USAGE
    except InputError as exc:
        print(f"contrakt: input error: {exc}", file=sys.stderr)
        return EX_NOINPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"contrakt: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EX_SOFTWARE


def entry() -> None:
    sys.exit(main())
