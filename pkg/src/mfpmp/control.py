"""Fixed-point map, per-layer root solves and the shooting iteration.

Each outer iteration freezes the forward and backward solutions generated by
the current control ``theta^k`` and then, layer by layer, solves

    f(theta_t) = theta_t + (1 / 2 lambda) sum_i w_i grad_theta F(X_i, theta_t)^T grad_x psi_t(X_i, Y_i) = 0

for ``theta^{k+1}_t``.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .adjoint import AdjointField, adjoint_grid, characteristic_field, loss, upwind_backward
from .field import ControlParams, ControlPath, field_bound, grad_theta, param_dim
from .forward import (COURANT_MAX, CFLError, finite_volume_forward, initial_class_densities,
                      integrate_particles, monte_carlo_forward)
from .measures import EmpiricalMeasure, GaussianSpec, centered_grid, kde

log = logging.getLogger(__name__)

FORWARD_SOLVERS = ("particle", "montecarlo", "finitevolume")
ADJOINT_SOLVERS = ("upwind", "characteristic")
ROOT_SOLVERS = ("brent", "bisection", "newton")


class BracketError(RuntimeError):
    pass


@dataclass
class ShootingConfig:
    lam: float | tuple = 0.1
    outer_iters: int = 15
    root_solver: str = "brent"
    bracket: float = 10.0
    root_tol: float = 1e-8
    forward_solver: str = "particle"
    adjoint_solver: str = "upwind"
    scheme: str = "rk4"
    T: float = 1.0
    dt: float = 0.05
    dx: float = 0.1
    grid_substeps: int = 1  # time substeps per layer for the grid solvers
    with_bias: bool = False
    init: object = 0.0  # float, "random", or a ControlPath
    seed: int = 0
    mc_reps: int = 20
    mc_n: int | None = None
    mc_dx: float = 0.025
    scan_points: int = 801
    max_sweeps: int = 200
    stop_tol: float | None = None  # stop once eps < stop_tol; None -> root_tol
    conv_tol: float = 1e-6
    accuracy_radius: float = 0.5
    workers: int = 1

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.size not in (1, 2) or np.any(lam <= 0):
            raise ValueError(f"lambda must be positive (scalar or pair), got {self.lam}")
        if int(self.outer_iters) < 0:
            raise ValueError("outer_iters must be nonnegative")
        if self.root_tol <= 0:
            raise ValueError("root_tol must be positive")
        if int(self.grid_substeps) < 1:
            raise ValueError("grid_substeps must be >= 1")
        if self.bracket <= 0:
            raise ValueError("bracket must be positive")
        if self.root_solver not in ROOT_SOLVERS:
            raise ValueError(f"unknown root solver {self.root_solver!r}")
        if self.forward_solver not in FORWARD_SOLVERS:
            raise ValueError(f"unknown forward solver {self.forward_solver!r}")
        if self.adjoint_solver not in ADJOINT_SOLVERS:
            raise ValueError(f"unknown adjoint solver {self.adjoint_solver!r}")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-12 * max(1.0, n) or round(n) < 1:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")

    @property
    def n_layers(self) -> int:
        return int(round(self.T / self.dt))

    def lam_vector(self, d: int) -> np.ndarray:
        """Per-component regularization weights in the flattened layout."""
        return expand_lambda(self.lam, d, self.with_bias)

    def echo(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, ControlPath):
                v = "path"
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def initial_guess(config: ShootingConfig, d: int) -> ControlPath:
    L, dt, wb = config.n_layers, config.dt, config.with_bias
    init = config.init
    if isinstance(init, ControlPath):
        return init
    if isinstance(init, str):
        if init != "random":
            raise ValueError(f"unknown initial guess {init!r}")
        rng = np.random.default_rng([config.seed, 7])
        return ControlPath(rng.random((L, param_dim(d, wb))), dt, d, wb)
    return ControlPath.constant(float(init), L, dt, d, wb)


def cfl_precheck(config: ShootingConfig, d: int) -> float:
    """Worst-case Courant number ``sqrt(d) dt / dx`` of the grid solvers."""
    grids = config.adjoint_solver == "upwind" or config.forward_solver == "finitevolume"
    c = field_bound(d) * config.dt / config.grid_substeps / config.dx
    if grids and c > COURANT_MAX:
        raise CFLError(c, "pre-check with |F| <= sqrt(d)")
    return c


# ---------------------------------------------------------------- residual

def _lam_arr(lam, m: int) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (m,))
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    return lam


def residual(theta_k: ControlParams, t, particles_t, grad_psi_t, lam, with_bias: bool = False,
             weights=None) -> np.ndarray:
    """``theta + (1/2 lam) sum_i w_i grad_theta F(X_i)^T grad psi_i``; ``t`` is informational."""
    x = particles_t.x if isinstance(particles_t, EmpiricalMeasure) else np.atleast_2d(particles_t)
    g = np.atleast_2d(np.asarray(grad_psi_t, dtype=float))
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, float)
    m = param_dim(theta_k.d, with_bias)
    lam = _lam_arr(lam, m)
    jac = grad_theta(x, theta_k, with_bias)
    return theta_k.flat(with_bias) + np.einsum("n,ndm,nd->m", w, jac, g) / (2.0 * lam)


def explicit_update(theta_k: ControlParams, x, g, lam, with_bias=False, weights=None) -> np.ndarray:
    """``-(1/2 lam) sum_i w_i grad_theta F(X_i, theta_k)^T g_i``: the map evaluated at its input."""
    return theta_k.flat(with_bias) - residual(theta_k, None, x, g, lam, with_bias, weights)


class _Component:
    """Scalar restriction of the residual to one parameter, others frozen.

    Parameter ``j`` only enters row ``r`` of the pre-activation, through the
    input coordinate ``v_i`` (``x_{i,c}`` for ``W_rc``, 1 for ``tau_r``).
    """

    def __init__(self, theta: np.ndarray, j: int, x, g, w, lam, d: int, with_bias: bool):
        p = ControlParams.from_flat(theta, d, with_bias)
        if j < d * d:
            r, c = divmod(j, d)
            self.v = x[:, c]
        else:
            r = j - d * d
            self.v = np.ones(len(x))
        self.z0 = x @ p.W[r] + p.tau[r]
        self.base = theta[j]
        self.coef = w * self.v * g[:, r] / (2.0 * lam)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        z = self.z0 + np.multiply.outer(s - self.base, self.v)
        return s + (1.0 - np.tanh(z) ** 2) @ self.coef

    def deriv(self, s):
        z = self.z0 + (s - self.base) * self.v
        t = np.tanh(z)
        return 1.0 + (-2.0 * t * (1 - t ** 2) * self.v) @ self.coef


def _brackets(fun, bracket: float, n: int, tol: float):
    s = np.linspace(-bracket, bracket, n)
    f = fun(s)
    zero = np.flatnonzero(f == 0.0)
    change = np.flatnonzero(f[:-1] * f[1:] < 0)
    out = sorted([(s[i], s[i]) for i in zero] + [(s[i], s[i + 1]) for i in change])
    return out, f[0], f[-1]


def _local_bracket(fun, x0: float, bracket: float, h: float):
    """Sign change nearest ``x0`` by symmetric geometric expansion, or None."""
    f0 = float(fun(x0))
    if f0 == 0.0:
        return (x0, x0)
    while h < 2 * bracket:
        lo, hi = max(x0 - h, -bracket), min(x0 + h, bracket)
        flo, fhi = float(fun(lo)), float(fun(hi))
        if flo * f0 <= 0 and fhi * f0 <= 0:
            return (lo, x0) if x0 - lo <= hi - x0 else (x0, hi)
        if flo * f0 <= 0:
            return (lo, x0)
        if fhi * f0 <= 0:
            return (x0, hi)
        h *= 2
    return None


def _root_in(fun, a, b, solver, tol):
    if a == b:
        return a
    xtol = min(tol * 1e-3, 1e-12)
    if solver == "bisection":
        return optimize.bisect(fun, a, b, xtol=xtol, maxiter=400)
    if solver == "newton":
        try:
            r = optimize.newton(fun, 0.5 * (a + b), fprime=fun.deriv, tol=xtol, maxiter=100)
            if a <= r <= b and abs(fun(r)) < tol:
                return float(r)
        except (RuntimeError, OverflowError, ZeroDivisionError):
            pass
        log.debug("newton left its bracket; falling back to brent")
    return optimize.brentq(fun, a, b, xtol=xtol, maxiter=400)


def solve_component(fun, prev: float, solver: str, bracket: float, tol: float, n_scan: int,
                    current: float | None = None):
    """Root of a scalar residual closest to ``prev``; returns (root, multiplicity).

    With ``current`` set (later Gauss-Seidel sweeps) only a local bracket
    around it is searched; the full scan runs if that fails.
    """
    if current is not None:
        br = _local_bracket(fun, current, bracket, 2 * bracket / (n_scan - 1))
        if br is not None:
            return float(_root_in(fun, br[0], br[1], solver, tol)), 0
    br, f_lo, f_hi = _brackets(fun, bracket, n_scan, tol)
    if not br:
        raise BracketError(f"no sign change in [-{bracket}, {bracket}]: "
                           f"f(-C)={f_lo:.6g}, f(C)={f_hi:.6g}")
    roots = np.array([_root_in(fun, a, b, solver, tol) for a, b in br])
    return float(roots[np.argmin(np.abs(roots - prev))]), len(roots)


def solve_layer(t, particles_t, adjoint, lam, solver: str = "brent", bracket: float = 10.0,
                tol: float = 1e-8, prev=None, with_bias: bool = False, weights=None,
                n_scan: int = 801, max_sweeps: int = 200, info: dict | None = None) -> ControlParams:
    """Root of the layer residual by componentwise (Gauss-Seidel) scalar solves.

    ``adjoint`` is an :class:`AdjointField` (queried at ``t``) or an array of
    precomputed gradients at the particles.
    """
    if isinstance(particles_t, EmpiricalMeasure):
        x, y = particles_t.x, particles_t.y
    else:
        x, y = particles_t
        x, y = np.atleast_2d(x), np.atleast_2d(y)
    g = adjoint.grad_x(t, x, y) if isinstance(adjoint, AdjointField) else np.atleast_2d(adjoint)
    d = x.shape[1]
    m = param_dim(d, with_bias)
    lam = _lam_arr(lam, m)
    w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, float)
    theta = np.zeros(m) if prev is None else np.array(prev, dtype=float).reshape(m)
    start = theta.copy()
    mult = 1
    for sweep in range(1, max_sweeps + 1):
        for j in range(m):
            fun = _Component(theta, j, x, g, w, lam[j], d, with_bias)
            theta[j], k = solve_component(fun, start[j], solver, bracket, tol, n_scan,
                                          current=None if sweep == 1 else theta[j])
            mult = max(mult, k)
        p = ControlParams.from_flat(theta, d, with_bias)
        res = float(np.max(np.abs(residual(p, t, x, g, lam, with_bias, w))))
        if res < tol:
            break
    else:
        log.warning("layer at t=%.3f: residual %.3g after %d sweeps", t, res, max_sweeps)
    if info is not None:
        info.update(multiplicity=mult, sweeps=sweep, residual=res)
    return p


# ---------------------------------------------------------------- frozen fields

@dataclass
class Quadrature:
    """Labelled quadrature points for one layer node."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray


@dataclass
class FrozenFields:
    nodes: list  # Quadrature per layer k = 0..L-1
    adjoint: AdjointField
    forward_meta: dict = field(default_factory=dict)

    def grads(self, k: int) -> np.ndarray:
        q = self.nodes[k]
        return self.adjoint.grad_x(self.adjoint.times[k], q.x, q.y)


def _x_radius(mu0: EmpiricalMeasure, spec: GaussianSpec | None) -> float:
    r = float(np.max(np.linalg.norm(mu0.x, axis=1)))
    if spec is not None:
        r = max(r, float(np.max(np.linalg.norm(spec.centers, axis=1) + 5 * spec.stds)))
    return r


def _forward_grid(radius: float, config: ShootingConfig, d: int, dx: float, extra: float = 0.0):
    # numerical diffusion of the grid schemes spreads mass past the particle support
    half = radius + math.sqrt(d) * config.T + max(1.0, 10 * dx) + extra
    return centered_grid(math.ceil(half / dx - 1e-9) * dx, dx, d)


def frozen_fields(theta: ControlPath, mu0: EmpiricalMeasure, config: ShootingConfig,
                  spec: GaussianSpec | None = None, seed_offset: int = 0) -> FrozenFields:
    """Forward and backward solves for a fixed control."""
    d = theta.d
    radius = _x_radius(mu0, spec)
    meta = {}
    if config.forward_solver == "particle":
        ens = integrate_particles(mu0, theta, config.scheme)
        nodes = [Quadrature(ens.states[k], mu0.y, np.full(mu0.n, 1.0 / mu0.n))
                 for k in range(theta.n_layers)]
    elif config.forward_solver == "finitevolume":
        grid = _forward_grid(radius, config, d, config.dx)
        if spec is not None:
            labels, cw, dens0 = initial_class_densities(spec, grid)
        else:
            labels, inv = np.unique(mu0.y, axis=0, return_inverse=True)
            inv = np.asarray(inv).ravel()
            cw = np.bincount(inv) / mu0.n
            dens0 = [kde(mu0.x[inv == c], grid) for c in range(len(labels))]
        sols = [finite_volume_forward(g0, theta, config.dt / config.grid_substeps) for g0 in dens0]
        pts = grid.mesh().reshape(-1, d)
        nodes = []
        for k in range(theta.n_layers):
            xs, ys, ws = [], [], []
            for c, sol in enumerate(sols):
                wt = sol[k].values.ravel() * grid.cell_volume * cw[c]
                keep = wt > 0
                xs.append(pts[keep])
                ys.append(np.repeat(labels[c][None], keep.sum(), axis=0))
                ws.append(wt[keep])
            nodes.append(Quadrature(np.vstack(xs), np.vstack(ys), np.concatenate(ws)))
        meta["fv_mass_drift"] = max(abs(s[-1].mass + s[-1].meta["outflow"] - s[0].mass)
                                    for s in sols)
        meta["fv_outflow"] = max(s[-1].meta["outflow"] for s in sols)
        meta["fv_final_marginal_mean"] = (sum(
            cw[c] * sols[c][-1].moments()[0] for c in range(len(sols)))).tolist()
    else:
        if spec is None:
            raise ValueError("the Monte Carlo backend needs the generating GaussianSpec")
        # resampling through the KDE inflates the spread at every layer
        grid = _forward_grid(radius, config, d, config.mc_dx, extra=2.0)
        n = config.mc_n or mu0.n
        sol = monte_carlo_forward(spec, theta, n, config.mc_reps, grid,
                                  seed=config.seed + seed_offset, scheme=config.scheme)
        nodes = [Quadrature(s.x, s.y, np.full(s.n, 1.0 / s.n)) for s in sol.samples]
        meta["mc_final_mean"] = sol.mean(theta.n_layers).tolist()
    # adjoint grid must hold every quadrature point at every node
    qmax = max(float(np.max(np.abs(q.x))) for q in nodes)
    agrid = adjoint_grid(max(radius, qmax), theta, config.dx)
    if config.adjoint_solver == "upwind":
        adj = upwind_backward(theta, agrid, config.dt / config.grid_substeps)
    else:
        adj = characteristic_field(theta, agrid, config.scheme)
    return FrozenFields(nodes, adj, meta)


def lambda_map(theta: ControlPath, mu0: EmpiricalMeasure, config: ShootingConfig,
               spec: GaussianSpec | None = None, fields: FrozenFields | None = None) -> ControlPath:
    """One explicit evaluation of the fixed-point map at ``theta``."""
    fields = frozen_fields(theta, mu0, config, spec) if fields is None else fields
    lam = config.lam_vector(theta.d)
    out = np.empty_like(theta.values)
    for k in range(theta.n_layers):
        q = fields.nodes[k]
        out[k] = explicit_update(theta.layer(k), q.x, fields.grads(k), lam, theta.with_bias, q.w)
    return theta.replace(out)


def lambda_bound(fields: FrozenFields, lam, d: int) -> float:
    """``(1/2 lam) sqrt(d) R max|grad psi|`` from the quadrature radius and logged gradients."""
    radius = max(float(np.max(np.linalg.norm(q.x, axis=1))) for q in fields.nodes)
    gmax = max(float(np.max(np.linalg.norm(fields.grads(k), axis=1)))
               for k in range(len(fields.nodes)))
    lam_min = float(np.min(np.atleast_1d(lam)))
    return math.sqrt(d) * max(radius, 1.0) * gmax / (2 * lam_min)


# ---------------------------------------------------------------- shooting

def terminal_cost(theta: ControlPath, mu0: EmpiricalMeasure, scheme="rk4") -> float:
    ens = integrate_particles(mu0, theta, scheme)
    return float(np.mean(loss(ens.states[-1], mu0.y)))


def expand_lambda(lam, d: int, with_bias: bool) -> np.ndarray:
    """Scalar, (W, tau) pair, or full per-component weights -> per-component vector."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    m = param_dim(d, with_bias)
    if lam.size == m:
        return lam
    if lam.size in (1, 2):
        return np.concatenate([np.full(d * d, lam[0])] + ([np.full(d, lam[-1])] if with_bias else []))
    raise ValueError(f"cannot expand lambda of size {lam.size} to {m} components")


def regularization(theta: ControlPath, lam) -> float:
    """``lam |theta|_2^2`` with per-component weights."""
    w = expand_lambda(lam, theta.d, theta.with_bias)
    return float(theta.dt * np.sum(theta.values ** 2 * w[None, :]))


def terminal_accuracy(theta: ControlPath, mu0: EmpiricalMeasure, radius: float, scheme="rk4"):
    ens = integrate_particles(mu0, theta, scheme)
    return float(np.mean(np.linalg.norm(ens.states[-1] - mu0.y, axis=1) < radius))


@dataclass
class ShootingReport:
    config: dict
    thetas: list
    eps: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    terminal: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    multiplicity: list = field(default_factory=list)
    tv_growth: list = field(default_factory=list)
    lambda_bounds: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    final_residual: float | None = None
    forward_meta: list = field(default_factory=list)

    @property
    def final(self) -> ControlPath:
        return self.thetas[-1]

    @property
    def iterations(self) -> int:
        return len(self.eps)

    @property
    def converged(self) -> bool:
        if not self.eps:
            return False
        return bool(np.isfinite(self.eps[-1]) and self.eps[-1] < self.config["conv_tol"])

    def to_dict(self, timings: bool = False) -> dict:
        out = {
            "config": self.config,
            "iterations": self.iterations,
            "converged": self.converged,
            "eps": self.eps,
            "fixed_point_residuals": self.residuals,
            "final_fixed_point_residual": self.final_residual,
            "terminal_costs": self.terminal,
            "costs": self.costs,
            "accuracies": self.accuracies,
            "root_multiplicity": self.multiplicity,
            "tv_growth_max": self.tv_growth,
            "lambda_bounds": self.lambda_bounds,
            "forward_meta": self.forward_meta,
            "final_theta": self.final.to_dict(),
        }
        if timings:
            out["wall_times"] = self.wall_times
        return out

    def to_json(self, path, timings: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(timings), indent=1, sort_keys=True))

    def write_thetas(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k, th in enumerate(self.thetas):
            th.to_json(directory / f"theta_{k:03d}.json")


def _solve_all_layers(fields: FrozenFields, theta: ControlPath, config: ShootingConfig):
    lam = config.lam_vector(theta.d)
    tol = config.root_tol

    def one(k):
        q = fields.nodes[k]
        info = {}
        p = solve_layer(theta.times[k], (q.x, q.y), fields.grads(k), lam, config.root_solver,
                        config.bracket, tol, prev=theta.values[k], with_bias=theta.with_bias,
                        weights=q.w, n_scan=config.scan_points, max_sweeps=config.max_sweeps,
                        info=info)
        return p.flat(theta.with_bias), info

    ks = range(theta.n_layers)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            res = list(ex.map(one, ks))
    else:
        res = [one(k) for k in ks]
    values = np.array([r[0] for r in res])
    return theta.replace(values), max(r[1]["multiplicity"] for r in res)


def shooting(config: ShootingConfig, mu0: EmpiricalMeasure, spec: GaussianSpec | None = None,
             progress=None) -> ShootingReport:
    """Forward solve, backward solve, layerwise root solve; repeat.

    Stops after ``outer_iters`` iterations or once ``eps < stop_tol``. The
    fixed-point residual of every iterate is computed from the same frozen
    fields that produce the next iterate.
    """
    d = mu0.dim
    cfl_precheck(config, d)
    theta = initial_guess(config, d)
    lam = config.lam_vector(d)
    stop = config.root_tol if config.stop_tol is None else config.stop_tol
    rep = ShootingReport(config.echo(), [theta])

    def record_cost(th):
        term = terminal_cost(th, mu0, config.scheme)
        rep.terminal.append(term)
        rep.costs.append(term + regularization(th, lam))
        rep.accuracies.append(terminal_accuracy(th, mu0, config.accuracy_radius, config.scheme))

    record_cost(theta)
    for it in range(int(config.outer_iters)):
        t0 = time.perf_counter()
        fields = frozen_fields(theta, mu0, config, spec, seed_offset=1000 * it)
        lm = lambda_map(theta, mu0, config, spec, fields)
        rep.residuals.append((theta - lm).norm2())
        rep.lambda_bounds.append(lambda_bound(fields, lam, d))
        rep.tv_growth.append(max(fields.adjoint.meta.get("tv_growth", [1.0])))
        rep.forward_meta.append(fields.forward_meta)
        new, mult = _solve_all_layers(fields, theta, config)
        e = (new - theta).norm2()
        rep.eps.append(e)
        rep.multiplicity.append(mult)
        theta = new
        rep.thetas.append(theta)
        record_cost(theta)
        rep.wall_times.append(time.perf_counter() - t0)
        if progress:
            progress(it, e)
        if not np.isfinite(e) or e < stop:
            break
    if config.outer_iters > 0:
        rep.final_residual = (theta - lambda_map(theta, mu0, config, spec)).norm2()
    return rep


# ---------------------------------------------------------------- diagnostics

@dataclass
class ContractionSummary:
    eps: list
    ratios: list
    max_ratio_after_2: float
    monotone_after_2: bool
    oscillating: bool

    def to_dict(self) -> dict:
        return asdict(self)


def contraction_diagnostics(report, osc_threshold: float = 1.0, floor: float = 1e-12) -> ContractionSummary:
    """Ratios ``eps(k+1) / eps(k)``; the sequence is checked from ``eps(2)`` on.

    ``eps(k)`` is 1-based: ``eps(1) = |theta^1 - theta^0|``. The run is flagged
    oscillating when some ratio from ``eps(2)`` onward reaches ``osc_threshold``.
    Steps below ``floor`` are round-off and excluded from the checks.
    """
    eps = [float(e) for e in (report.eps if hasattr(report, "eps") else report)]
    if len(eps) < 2:
        raise ValueError("contraction diagnostics need at least two iterations")
    ratios = [eps[k + 1] / eps[k] if eps[k] > 0 else math.inf for k in range(len(eps) - 1)]
    tail = [r for k, r in enumerate(ratios) if k >= 1 and eps[k] > floor and eps[k + 1] > floor]
    mx = max(tail) if tail else math.nan
    monotone = all(r < 1.0 for r in tail)
    osc = bool(tail) and mx >= osc_threshold
    return ContractionSummary(eps, ratios, mx, monotone, osc)
