"""Command line: train, compare, double-descent, validate.

Exit codes: 0 success, 1 validation-suite failure, 2 config error, 3 numerical
hard error (CFL, bracket failure, grid too small).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import (ADJOINT_SOLVERS, FORWARD_SOLVERS, ROOT_SOLVERS, BracketError,
                      ShootingConfig, cfl_precheck, contraction_diagnostics, shooting)
from .forward import CFLError, GridTooSmall, integrate_particles
from .measures import GaussianSpec, MeasureError, sample_initial

log = logging.getLogger("mfpmp")

TASKS = ("bimodal1d", "bimodal2d", "unimodal1d", "unimodal2d", "custom")
TASK_LAMBDA = {"bimodal1d": 0.1, "bimodal2d": 0.1, "unimodal1d": 1e-3, "unimodal2d": 1e-4,
               "custom": 0.1}
TASK_DIM = {"bimodal1d": 1, "bimodal2d": 2, "unimodal1d": 1, "unimodal2d": 2}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Every field defaults to the 1D bimodal experiment."""

    task: str = "bimodal1d"
    d: int | None = None
    T: float = 1.0
    dt: float = 0.05
    dx: float = 0.1
    grid_substeps: int = 1
    lam: float | list | None = None
    n_particles: int = 200
    outer_iters: int = 15
    forward_solver: str = "particle"
    adjoint_solver: str = "upwind"
    root_solver: str = "brent"
    root_tol: float = 1e-8
    stop_tol: float | None = None
    conv_tol: float = 1e-6
    bracket: float = 10.0
    with_bias: bool = False
    init: float | str = 0.0
    scheme: str = "rk4"
    mc_reps: int = 20
    mc_dx: float = 0.025
    std: float | None = None
    centers: list | None = None
    stds: list | float | None = None
    pos_label: list | None = None
    neg_label: list | None = None
    accuracy_radius: float = 0.5
    seed: int = 0
    output_dir: str = "runs"
    backends: list = field(default_factory=lambda: list(FORWARD_SOLVERS))
    compare_repeats: int = 3
    n_values: list = field(default_factory=lambda: [10, 25, 50, 100, 200])
    repeats: int = 5
    workers: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task != "custom":
            want = TASK_DIM[self.task]
            if self.d is not None and self.d != want:
                raise ConfigError(f"task {self.task} has d={want}, config says d={self.d}")
            self.d = want
        elif self.centers is None or self.pos_label is None or self.neg_label is None:
            raise ConfigError("custom task needs centers, pos_label and neg_label")
        if self.lam is None:
            self.lam = TASK_LAMBDA[self.task]
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.size not in (1, 2) or np.any(lam <= 0):
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.T <= 0 or self.dt <= 0 or self.dx <= 0:
            raise ConfigError("T, dt and dx must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-12:
            raise ConfigError(f"dt={self.dt} does not divide T={self.T}")
        if self.grid_substeps < 1:
            raise ConfigError("grid_substeps must be positive")
        if self.n_particles < 1 or self.mc_reps < 1 or self.repeats < 1:
            raise ConfigError("n_particles, mc_reps and repeats must be positive")
        if self.outer_iters < 0:
            raise ConfigError("outer_iters must be nonnegative")
        for name, value, allowed in (("forward_solver", self.forward_solver, FORWARD_SOLVERS),
                                     ("adjoint_solver", self.adjoint_solver, ADJOINT_SOLVERS),
                                     ("root_solver", self.root_solver, ROOT_SOLVERS),
                                     ("scheme", self.scheme, ("rk4", "euler"))):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        bad = [b for b in self.backends if b not in FORWARD_SOLVERS]
        if bad:
            raise ConfigError(f"unknown backend(s) {bad}; expected {FORWARD_SOLVERS}")
        if isinstance(self.init, str) and self.init != "random":
            raise ConfigError(f"init must be a number or 'random', got {self.init!r}")
        if not all(int(v) >= 1 for v in self.n_values):
            raise ConfigError("n_values must be positive integers")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def gaussian_spec(self) -> GaussianSpec:
        if self.task == "custom":
            return GaussianSpec(self.centers, self.stds if self.stds is not None else 0.1,
                                self.pos_label, self.neg_label)
        if self.task.startswith("bimodal"):
            return GaussianSpec.bimodal(self.d, std=0.1 if self.std is None else self.std)
        return GaussianSpec.unimodal(self.d, std=0.3 if self.std is None else self.std)

    def shooting_config(self, **over) -> ShootingConfig:
        kw = dict(lam=tuple(self.lam) if isinstance(self.lam, list) else self.lam,
                  outer_iters=self.outer_iters, root_solver=self.root_solver,
                  bracket=self.bracket, root_tol=self.root_tol,
                  forward_solver=self.forward_solver, adjoint_solver=self.adjoint_solver,
                  scheme=self.scheme, T=self.T, dt=self.dt, dx=self.dx,
                  grid_substeps=self.grid_substeps,
                  with_bias=self.with_bias, init=self.init, seed=self.seed,
                  mc_reps=self.mc_reps, mc_dx=self.mc_dx, stop_tol=self.stop_tol,
                  conv_tol=self.conv_tol, accuracy_radius=self.accuracy_radius,
                  workers=self.workers)
        kw.update(over)
        try:
            return ShootingConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o)}")


# ---------------------------------------------------------------- commands

def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    scfg = cfg.shooting_config()
    cfl_precheck(scfg, cfg.d)
    spec = cfg.gaussian_spec()
    mu0 = sample_initial(spec, cfg.n_particles, cfg.seed)
    rep = shooting(scfg, mu0, spec, progress=lambda k, e: log.info("iteration %d: eps=%.3e", k + 1, e))
    out.mkdir(parents=True, exist_ok=True)
    body = rep.to_dict()
    body["contraction"] = (contraction_diagnostics(rep).to_dict() if rep.iterations >= 2 else None)
    _dump(out / "report.json", body)
    _dump(out / "timings.json", {"wall_times": rep.wall_times})
    rep.final.to_json(out / "theta_final.json")
    rep.write_thetas(out / "thetas")
    traj = out / "trajectories"
    traj.mkdir(exist_ok=True)
    for k, th in enumerate(rep.thetas):
        integrate_particles(mu0, th, cfg.scheme).to_csv(traj / f"iter_{k:03d}.csv")
    log.info("converged=%s after %d iterations", rep.converged, rep.iterations)
    return 0


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    spec = cfg.gaussian_spec()
    mu0 = sample_initial(spec, cfg.n_particles, cfg.seed)
    results = {}
    for backend in cfg.backends:
        scfg0 = cfg.shooting_config(forward_solver=backend)
        cfl_precheck(scfg0, cfg.d)
        paths = []
        for r in range(cfg.compare_repeats):
            scfg = cfg.shooting_config(forward_solver=backend, seed=cfg.seed + 7919 * r)
            paths.append(shooting(scfg, mu0, spec).final)
        vals = np.array([p.values for p in paths])
        mean = paths[0].replace(vals.mean(axis=0))
        std = vals.std(axis=0)
        d = out / backend
        d.mkdir(parents=True, exist_ok=True)
        mean.to_json(d / "theta_mean.json")
        for r, p in enumerate(paths):
            p.to_json(d / f"theta_repeat_{r:02d}.json")
        results[backend] = {"mean": mean, "std_l2": float(np.sqrt(cfg.dt * np.sum(std ** 2))),
                            "std_max": float(std.max())}
    rows = []
    names = list(results)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            rows.append({"backend_a": a, "backend_b": b,
                         "dtheta_l2": (results[a]["mean"] - results[b]["mean"]).norm2()})
    with open(out / "pairwise.csv", "w") as fh:
        fh.write("backend_a,backend_b,dtheta_l2\n")
        for row in rows:
            fh.write(f"{row['backend_a']},{row['backend_b']},{row['dtheta_l2']!r}\n")
    _dump(out / "compare.json", {
        "backends": {k: {"std_l2": v["std_l2"], "std_max": v["std_max"]} for k, v in results.items()},
        "pairwise": rows, "repeats": cfg.compare_repeats,
    })
    return 0


def cmd_double_descent(cfg: ExperimentConfig, out: Path, n_values=None, repeats=None) -> int:
    from .cost import SweepConfig, double_descent_sweep, write_sweep

    scfg = cfg.shooting_config()
    cfl_precheck(scfg, cfg.d)
    sw = SweepConfig(cfg.gaussian_spec(), scfg, seed=cfg.seed, radius=cfg.accuracy_radius)
    recs = double_descent_sweep(n_values or cfg.n_values, repeats or cfg.repeats, sw)
    write_sweep(recs, out)
    return 0


def cmd_validate(level: str, out: Path, mutate: str | None = None) -> int:
    from . import validation

    results = validation.run(level, mutate=mutate)
    out.mkdir(parents=True, exist_ok=True)
    failed = []
    for res in results:
        _dump(out / f"{res['suite']}.json", res)
        print(f"[{'PASS' if res['passed'] else 'FAIL'}] {res['suite']}: {res['summary']}")
        if not res["passed"]:
            failed.append(res["suite"])
    if failed:
        print("failed suites: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfpmp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["train", "compare", "double-descent", "validate"])
    p.add_argument("--config", default=None, help="JSON config file (defaults: 1D bimodal)")
    p.add_argument("--seed", type=int, default=None, help="overrides config and MFPMP_SEED")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker cap for layer solves")
    p.add_argument("--level", choices=["fast", "full"], default="fast")
    p.add_argument("--mutate", choices=["grad_theta"], default=None,
                   help="validate only: inject a fault to check suite sensitivity")
    p.add_argument("--n-values", type=int, nargs="+", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        env = os.environ.get("MFPMP_SEED")
        if env is not None:
            try:
                cfg.seed = int(env)
            except ValueError as exc:
                raise ConfigError(f"MFPMP_SEED must be an integer, got {env!r}") from exc
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg.workers = args.threads
        if args.repeats is not None and args.repeats < 1:
            raise ConfigError("--repeats must be positive")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.output_dir)
    t0 = time.perf_counter()
    try:
        if args.command == "train":
            code = cmd_train(cfg, out)
        elif args.command == "compare":
            code = cmd_compare(cfg, out)
        elif args.command == "double-descent":
            code = cmd_double_descent(cfg, out, args.n_values, args.repeats)
        else:
            code = cmd_validate(args.level, out, args.mutate)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CFLError as exc:
        print(f"numerical error (CFL condition, Courant={exc.courant:.4g}): {exc}", file=sys.stderr)
        return 3
    except BracketError as exc:
        print(f"numerical error (root bracket): {exc}", file=sys.stderr)
        return 3
    except (GridTooSmall, MeasureError) as exc:
        print(f"numerical error (grid/measure): {exc}", file=sys.stderr)
        return 3
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
