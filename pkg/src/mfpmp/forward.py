"""Forward continuity equation: particles, Monte Carlo resampling, finite volumes.

Also the characteristic flows ``Phi_(tau,t)`` and the resolvent matrices of
the linearized flow, integrated with the same explicit schemes.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field import ControlPath, ControlParams, eval_field, jac_x
from .measures import EmpiricalMeasure, GaussianSpec, GridDensity, MeasureError, kde

log = logging.getLogger(__name__)

#: integration sub-steps per layer for flows, resolvents and characteristics
FINE_SUBSTEPS = 8
COURANT_MAX = 0.9
COURANT_LOW = 0.05


class CFLError(RuntimeError):
    def __init__(self, courant: float, where: str = ""):
        self.courant = courant
        super().__init__(f"CFL violated{(' in ' + where) if where else ''}: "
                         f"Courant number {courant:.4f} > {COURANT_MAX}")


class GridTooSmall(MeasureError):
    pass


# ---------------------------------------------------------------- ODE steps

def _rk4(x, p: ControlParams, h):
    k1 = eval_field(x, p)
    k2 = eval_field(x + 0.5 * h * k1, p)
    k3 = eval_field(x + 0.5 * h * k2, p)
    k4 = eval_field(x + h * k3, p)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _euler(x, p: ControlParams, h):
    return x + h * eval_field(x, p)


def _rk4_var(x, r, p: ControlParams, h):
    """One RK4 step of the state together with its variational matrix."""
    def rhs(xx, rr):
        return eval_field(xx, p), jac_x(xx, p) @ rr

    k1x, k1r = rhs(x, r)
    k2x, k2r = rhs(x + 0.5 * h * k1x, r + 0.5 * h * k1r)
    k3x, k3r = rhs(x + 0.5 * h * k2x, r + 0.5 * h * k2r)
    k4x, k4r = rhs(x + h * k3x, r + h * k3r)
    return (x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            r + h / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r))


def _euler_var(x, r, p: ControlParams, h):
    return x + h * eval_field(x, p), r + h * (jac_x(x, p) @ r)


STEPPERS = {"rk4": _rk4, "euler": _euler}
VAR_STEPPERS = {"rk4": _rk4_var, "euler": _euler_var}


def _check_scheme(scheme: str):
    if scheme not in STEPPERS:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(STEPPERS)}")


def advance_layer(x, theta: ControlPath, k: int, scheme: str = "rk4", substeps: int = 1):
    """Advance states through layer ``k`` (forward in time)."""
    step = STEPPERS[scheme]
    p = theta.layer(k)
    h = theta.dt / substeps
    for _ in range(substeps):
        x = step(x, p, h)
    return x


def _segments(t0: float, t1: float, theta: ControlPath):
    """Split ``[t0, t1]`` (either orientation) at layer boundaries -> (a, b, layer)."""
    if t0 == t1:
        return []
    lo, hi = min(t0, t1), max(t0, t1)
    nodes = theta.times
    cuts = [lo] + [t for t in nodes if lo < t < hi] + [hi]
    segs = [(a, b, theta.layer_index(0.5 * (a + b))) for a, b in zip(cuts[:-1], cuts[1:])]
    if t1 < t0:
        segs = [(b, a, k) for a, b, k in reversed(segs)]
    return segs


def _integrate(x, t0, t1, theta: ControlPath, scheme="rk4", substeps=FINE_SUBSTEPS, need_jac=False):
    _check_scheme(scheme)
    x = np.array(x, dtype=float)
    d = x.shape[-1]
    r = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy() if need_jac else None
    hmax = theta.dt / substeps
    for a, b, k in _segments(t0, t1, theta):
        n = max(1, math.ceil(abs(b - a) / hmax - 1e-9))
        h = (b - a) / n
        p = theta.layer(k)
        for _ in range(n):
            if need_jac:
                x, r = VAR_STEPPERS[scheme](x, r, p, h)
            else:
                x = STEPPERS[scheme](x, p, h)
    return (x, r) if need_jac else x


def flow_map(tau: float, t: float, x, theta: ControlPath, scheme="rk4", substeps=FINE_SUBSTEPS):
    """``Phi_(tau,t)(x)``: start at ``x`` at time ``tau``, follow the field to ``t``."""
    return _integrate(x, tau, t, theta, scheme, substeps)


def flow_jacobian(tau: float, t: float, x, theta: ControlPath, scheme="rk4", substeps=FINE_SUBSTEPS):
    """``Phi_(tau,t)(x)`` and its Jacobian with respect to ``x``."""
    return _integrate(x, tau, t, theta, scheme, substeps, need_jac=True)


def resolvent(tau: float, t: float, x, theta: ControlPath, scheme="rk4", substeps=FINE_SUBSTEPS):
    """``R_(tau,t)(x)`` for a time-0 base point ``x``.

    Solves ``dR/dt = grad_x F(Phi_(0,t)(x)) R`` with ``R_(tau,tau) = Id``, i.e.
    the Jacobian of ``Phi_(tau,t)`` at ``Phi_(0,tau)(x)``.
    """
    z = flow_map(0.0, tau, x, theta, scheme, substeps)
    return flow_jacobian(tau, t, z, theta, scheme, substeps)[1]


@dataclass
class ResolventPath:
    x: np.ndarray
    tau: float
    times: np.ndarray
    matrices: np.ndarray


def resolvent_path(tau: float, x, theta: ControlPath, scheme="rk4", substeps=FINE_SUBSTEPS):
    """``R_(tau,t_k)(x)`` at every layer node ``t_k``."""
    mats = np.array([resolvent(tau, t, x, theta, scheme, substeps) for t in theta.times])
    return ResolventPath(np.asarray(x, float), tau, theta.times, mats)


# ---------------------------------------------------------------- particles

@dataclass
class ParticleEnsemble:
    """States at every node; ``states[k]`` holds ``X_(t_k)`` with shape (N, d)."""

    times: np.ndarray
    states: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    def at(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[k], self.labels)

    @property
    def final(self) -> EmpiricalMeasure:
        return self.at(-1)

    def max_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.states, axis=-1)))

    def dump_nodes(self, directory) -> None:
        """One CSV per time node in the empirical-measure format."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for k in range(len(self.times)):
            self.at(k).to_csv(directory / f"node_{k:03d}.csv")

    def to_csv(self, path) -> None:
        """Long format: one row per (node, particle)."""
        d = self.states.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "t", "particle"] + [f"x_{i}" for i in range(d)]
                       + [f"y_{i}" for i in range(d)])
            for k, t in enumerate(self.times):
                for i in range(self.n):
                    w.writerow([k, repr(float(t)), i] + [repr(float(v)) for v in self.states[k, i]]
                               + [repr(float(v)) for v in self.labels[i]])


def integrate_particles(mu0: EmpiricalMeasure, theta: ControlPath, scheme: str = "rk4",
                        substeps: int = 1) -> ParticleEnsemble:
    """Push every atom through the layers; labels are left untouched."""
    _check_scheme(scheme)
    if mu0.dim != theta.d:
        raise ValueError(f"measure dim {mu0.dim} != control dim {theta.d}")
    states = np.empty((theta.n_layers + 1, mu0.n, mu0.dim))
    states[0] = mu0.x
    x = mu0.x
    for k in range(theta.n_layers):
        x = advance_layer(x, theta, k, scheme, substeps)
        states[k + 1] = x
    return ParticleEnsemble(theta.times, states, mu0.y.copy())


def stability_exponent(theta: ControlPath, lip: float = 1.0) -> float:
    """``lip * int (1 + |theta_t|) dt``; ``exp`` of it bounds the growth of W1 between solutions.

    For the tanh layer ``|F(x1) - F(x2)| <= |W| |x1 - x2|``, so ``lip = 1``.
    """
    return float(lip * (theta.T + theta.norm1()))


# ---------------------------------------------------------------- grids

def courant_number(theta: ControlParams, points, dt: float, dx) -> float:
    """``max |F| dt / dx`` over the given sample points."""
    vel = np.linalg.norm(eval_field(points, theta), axis=-1)
    return float(np.max(vel) * dt / np.min(dx))


def check_courant(c: float, where: str = "") -> None:
    """Hard error above the safety limit."""
    if c > COURANT_MAX:
        raise CFLError(c, where)


def warn_low_courant(cs, where: str) -> None:
    """One warning per solve when even the largest Courant number is tiny."""
    c = max(cs) if cs else 0.0
    if 0 < c < COURANT_LOW:
        log.warning("largest Courant number %.3g below %.2f in %s", c, COURANT_LOW, where)


def _fv_axis_step(rho, vel, h_over_dx, axis):
    """Conservative upwind update along one axis; returns (rho, outflow mass density)."""
    rho = np.moveaxis(rho, axis, 0)
    vel = np.moveaxis(vel, axis, 0)  # velocity at the n + 1 faces
    vp, vm = np.maximum(vel, 0.0), np.minimum(vel, 0.0)
    zero = np.zeros((1,) + rho.shape[1:])
    left = np.concatenate([zero, rho], axis=0)   # upwind cell for v > 0
    right = np.concatenate([rho, zero], axis=0)  # upwind cell for v < 0
    flux = vp * left + vm * right
    new = rho - h_over_dx * (flux[1:] - flux[:-1])
    out = h_over_dx * (np.sum(-np.minimum(flux[0], 0.0)) + np.sum(np.maximum(flux[-1], 0.0)))
    return np.moveaxis(new, 0, axis), out


def _face_points(grid: GridDensity, axis: int) -> np.ndarray:
    cen = grid.centers()
    axes = list(cen)
    axes[axis] = grid.edges()[axis]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def finite_volume_forward(rho0: GridDensity, theta: ControlPath, dt: float | None = None):
    """Upwind finite volumes with zero inflow; dimensions are Lie-split.

    ``dt`` must divide the layer width; returns the density at every layer node.
    Mass leaving through the boundary is recorded in ``meta['outflow']``.
    """
    dt = theta.dt if dt is None else float(dt)
    sub = int(round(theta.dt / dt))
    if sub < 1 or abs(sub * dt - theta.dt) > 1e-12 * theta.dt:
        raise ValueError(f"time step {dt} does not divide the layer width {theta.dt}")
    if rho0.k != theta.d:
        raise ValueError("grid dimension differs from the state dimension")
    dx = rho0.spacing
    faces = [_face_points(rho0, a) for a in range(rho0.k)]
    out = [rho0]
    rho = rho0.values.copy()
    lost = 0.0
    cs = []
    for k in range(theta.n_layers):
        p = theta.layer(k)
        vels = [eval_field(faces[a], p)[..., a] for a in range(rho0.k)]
        c = max(float(np.max(np.abs(v))) for v in vels) * dt / float(np.min(dx))
        c = max(c, courant_number(p, rho0.mesh().reshape(-1, rho0.k), dt, dx))
        check_courant(c, f"finite volume layer {k}")
        cs.append(c)
        for _ in range(sub):
            for a in range(rho0.k):
                rho, o = _fv_axis_step(rho, vels[a], dt / dx[a], a)
                lost += o * rho0.cell_volume
        # monotone scheme: negatives appear only at round-off level
        snap = rho0.like(rho.copy(), signed=bool(np.any(rho < 0)))
        snap.meta = dict(rho0.meta, outflow=lost, layer=k + 1)
        out.append(snap)
    warn_low_courant(cs, "finite volume solve")
    return out


# ---------------------------------------------------------------- Monte Carlo

@dataclass
class MonteCarloSolution:
    """Per-node class densities (each unit mass) with fixed class weights.

    ``samples[k]`` holds the pooled labelled draws from node ``k`` used to
    advance to node ``k + 1``; they double as quadrature points for the control
    update.
    """

    times: np.ndarray
    class_labels: np.ndarray
    class_weights: np.ndarray
    densities: list  # densities[k][c] -> GridDensity
    samples: list = field(default_factory=list)

    def marginal(self, k: int) -> GridDensity:
        vals = sum(w * g.values for w, g in zip(self.class_weights, self.densities[k]))
        return self.densities[k][0].like(vals)

    @property
    def marginals(self) -> list:
        return [self.marginal(k) for k in range(len(self.times))]

    def mean(self, k: int) -> np.ndarray:
        return self.marginal(k).moments()[0]


def initial_class_densities(spec: GaussianSpec, grid: GridDensity):
    """Exact cell averages of each label class of ``spec``; returns (labels, weights, grids)."""
    labels, weights, dens = [], [], []
    for positive, lab in ((True, spec.pos_label), (False, spec.neg_label)):
        mass = spec.class_cell_mass(grid, positive)
        total = mass.sum()
        if total <= 0:
            continue
        labels.append(lab)
        weights.append(total)
        dens.append(grid.like(mass / (total * grid.cell_volume), signed=False))
    weights = np.array(weights) / np.sum(weights)
    return np.array(labels), weights, dens


def _edge_mass(g: GridDensity) -> float:
    v = g.values
    idx = []
    for a in range(v.ndim):
        sl = [slice(None)] * v.ndim
        sl[a] = 0
        idx.append(np.sum(v[tuple(sl)]))
        sl[a] = -1
        idx.append(np.sum(v[tuple(sl)]))
    return float(sum(idx) * g.cell_volume)


def monte_carlo_forward(spec: GaussianSpec, theta: ControlPath, n: int, reps: int,
                        grid: GridDensity, bandwidth=None, seed: int = 0,
                        scheme: str = "rk4", edge_tol: float = 1e-6) -> MonteCarloSolution:
    """Sample, move one layer, estimate by KDE, average over ``reps`` repetitions.

    Labels are atoms constant in time, so each label class carries its own
    x-density. Repetition ``m`` of layer ``k`` draws from the generator seeded
    with ``(seed, k, m)``.
    """
    if n < 1 or reps < 1:
        raise ValueError("n and reps must be positive")
    if grid.k != theta.d:
        raise ValueError("grid dimension differs from the state dimension")
    labels, weights, dens0 = initial_class_densities(spec, grid)
    counts = [max(2, int(round(n * w))) for w in weights]
    densities = [dens0]
    samples = []
    lo = np.array([c[0] for c in grid.centers()]) - grid.spacing / 2
    hi = np.array([c[-1] for c in grid.centers()]) + grid.spacing / 2
    for k in range(theta.n_layers):
        acc = [np.zeros(grid.shape) for _ in labels]
        pooled_x, pooled_y = [], []
        for m in range(reps):
            rng = np.random.default_rng([seed, k, m])
            for c, cnt in enumerate(counts):
                if k == 0:
                    x = _sample_class(spec, c == 0, cnt, rng)
                else:
                    x = densities[k][c].sample(cnt, rng)
                pooled_x.append(x)
                pooled_y.append(np.repeat(labels[c][None, :], cnt, axis=0))
                x1 = advance_layer(x, theta, k, scheme)
                if np.any(x1 < lo) or np.any(x1 > hi):
                    raise GridTooSmall(f"advected samples left the grid box at layer {k}")
                acc[c] += kde(x1, grid, bandwidth).values
        samples.append(EmpiricalMeasure(np.vstack(pooled_x), np.vstack(pooled_y)))
        step = [grid.like(a / reps, signed=False) for a in acc]
        for g in step:
            if _edge_mass(g) > edge_tol:
                raise GridTooSmall(f"density reaches the grid boundary at layer {k + 1}")
        densities.append(step)
    return MonteCarloSolution(theta.times, labels, weights, densities, samples)


def _sample_class(spec: GaussianSpec, positive: bool, n: int, rng) -> np.ndarray:
    """Exact draws from one label class of the mixture (rejection on the sign)."""
    out = []
    got = 0
    while got < n:
        x = spec.sample_x(max(2 * (n - got), 16), rng)
        keep = x[(x[:, 0] > 0) == positive]
        out.append(keep)
        got += len(keep)
    return np.vstack(out)[:n]


def variational_trajectory(x, theta: ControlPath, substeps: int = FINE_SUBSTEPS, scheme: str = "rk4"):
    """States and ``R_(0,t)`` on the fine grid ``t_j = j dt / substeps``.

    Returns (times, X with shape (J+1, N, d), R with shape (J+1, N, d, d)).
    """
    _check_scheme(scheme)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    h = theta.dt / substeps
    J = theta.n_layers * substeps
    X = np.empty((J + 1, n, d))
    R = np.empty((J + 1, n, d, d))
    X[0] = x
    R[0] = np.eye(d)
    step = VAR_STEPPERS[scheme]
    for k in range(theta.n_layers):
        p = theta.layer(k)
        for s in range(substeps):
            j = k * substeps + s
            X[j + 1], R[j + 1] = step(X[j], R[j], p, h)
    return np.arange(J + 1) * h, X, R
