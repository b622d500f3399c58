"""Backward adjoint ``psi(t, x, y)``: characteristic and upwind solutions, gradients, sigma-bar.

With the squared loss the adjoint is an affine function of ``y`` plus ``|y|^2``:

    psi(t, x, y) = A(t, x) - 2 B(t, x) . y + |y|^2,

with ``A(T, x) = |x|^2`` and ``B(T, x) = x``. Transport in ``x`` is linear and
does not couple ``y``, so every explicit scheme applied to the full ``(x, y)``
grid acts on ``A`` and each ``B_j`` separately; the field is stored in that
form and evaluated on any label without materializing the product mesh.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .field import ControlPath, ControlParams, eval_field, jac_x
from .forward import (FINE_SUBSTEPS, _check_scheme, _segments, check_courant, courant_number,
                      flow_map, warn_low_courant)
from .measures import GridDensity, MeasureError, centered_grid

log = logging.getLogger(__name__)


def loss(x, y) -> np.ndarray:
    x, y = np.asarray(x, float), np.asarray(y, float)
    return np.sum((x - y) ** 2, axis=-1)


def loss_grad(x, y) -> np.ndarray:
    return 2.0 * (np.asarray(x, float) - np.asarray(y, float))


class OutOfBox(MeasureError):
    pass


# ---------------------------------------------------------------- characteristic form

def characteristic_psi(t: float, x, y, theta: ControlPath, scheme="rk4",
                       substeps=FINE_SUBSTEPS) -> np.ndarray:
    """``l(Phi_(t,T)(x), y)``; batched over leading axes of ``x``/``y``."""
    return loss(flow_map(t, theta.T, x, theta, scheme, substeps), y)


def adjoint_box(radius: float, theta: ControlPath, dx: float) -> float:
    """Half-width for the x-grid: particle support plus the distance a boundary error travels."""
    d = theta.d
    b = radius + math.sqrt(d) * theta.T + 3 * dx
    return math.ceil(b / dx - 1e-9) * dx


# ---------------------------------------------------------------- field container

@dataclass
class AdjointField:
    """``psi`` on the time nodes of ``theta`` over the x-nodes of ``grid`` (cell centers)."""

    times: np.ndarray
    grid: GridDensity
    A: np.ndarray  # (L+1, *grid.shape)
    B: np.ndarray  # (L+1, *grid.shape, d)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._splines = {}

    @property
    def d(self) -> int:
        return self.grid.k

    @property
    def nodes(self) -> list:
        return self.grid.centers()

    def node_index(self, t: float) -> int:
        dt = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        return int(min(max(round(t / dt), 0), len(self.times) - 1))

    def slice_values(self, k: int, y) -> np.ndarray:
        """``psi(t_k, x_node, y)`` for one label ``y``."""
        y = np.asarray(y, float).reshape(-1)
        return self.A[k] - 2.0 * self.B[k] @ y + y @ y

    def product_values(self, k: int, ynodes) -> np.ndarray:
        """Full ``(x, y)`` slice for d = 1 as an array (nx, ny)."""
        if self.d != 1:
            raise ValueError("product slices are only materialized for d = 1")
        ynodes = np.asarray(ynodes, float).ravel()
        return self.A[k][:, None] - 2.0 * self.B[k][:, 0][:, None] * ynodes[None, :] + ynodes ** 2

    def snapshot(self, k: int, y) -> GridDensity:
        g = self.grid.like(self.slice_values(k, y), signed=True)
        g.meta = {"t": float(self.times[k]), "label": np.asarray(y, float).ravel().tolist()}
        return g

    def _interp(self, k: int):
        if k not in self._splines:
            nodes = self.nodes
            comps = [self.A[k]] + [self.B[k][..., j] for j in range(self.d)]
            if self.d == 1:
                sp = [CubicSpline(nodes[0], c, bc_type="natural") for c in comps]
            elif self.d == 2:
                sp = [RectBivariateSpline(nodes[0], nodes[1], c, kx=3, ky=3) for c in comps]
            else:
                raise NotImplementedError("gradient interpolation implemented for d <= 2")
            self._splines[k] = sp
        return self._splines[k]

    def _check_inside(self, x):
        nodes = self.nodes
        lo = np.array([n[0] for n in nodes])
        hi = np.array([n[-1] for n in nodes])
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise OutOfBox("gradient query outside the adjoint grid box")

    def _eval(self, sp, x, which):
        if self.d == 1:
            return sp(x[:, 0], 1) if which == "d0" else sp(x[:, 0])
        if which == "val":
            return sp.ev(x[:, 0], x[:, 1])
        return sp.ev(x[:, 0], x[:, 1], dx=int(which == "d0"), dy=int(which == "d1"))

    def value(self, t: float, x, y) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        y = np.atleast_2d(np.asarray(y, float))
        self._check_inside(x)
        sp = self._interp(self.node_index(t))
        out = self._eval(sp[0], x, "val") + np.sum(y * y, axis=1)
        for j in range(self.d):
            out = out - 2.0 * self._eval(sp[1 + j], x, "val") * y[:, j]
        return out

    def grad_x(self, t: float, x, y) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        y = np.atleast_2d(np.asarray(y, float))
        self._check_inside(x)
        sp = self._interp(self.node_index(t))
        out = np.empty_like(x)
        for a in range(self.d):
            which = f"d{a}"
            g = self._eval(sp[0], x, which)
            for j in range(self.d):
                g = g - 2.0 * self._eval(sp[1 + j], x, which) * y[:, j]
            out[:, a] = g
        return out

    def max_abs(self, ynodes) -> float:
        """Largest ``|psi|`` over the stored nodes and the label nodes ``ynodes`` (rows)."""
        ynodes = np.atleast_2d(np.asarray(ynodes, float))
        best = 0.0
        for k in range(len(self.times)):
            for y in ynodes:
                best = max(best, float(np.max(np.abs(self.slice_values(k, y)))))
        return best


def grad_x_psi(fld: AdjointField, t: float, x, y) -> np.ndarray:
    """Spline gradient of the ``psi`` slice at the node nearest ``t``."""
    return fld.grad_x(t, x, y)


# ---------------------------------------------------------------- upwind solver

def _ghost_pad(u, axis):
    """Linear extrapolation of one ghost node on both ends of ``axis``."""
    u = np.moveaxis(u, axis, 0)
    lo = 2 * u[0] - u[1]
    hi = 2 * u[-1] - u[-2]
    return np.moveaxis(np.concatenate([lo[None], u, hi[None]], axis=0), 0, axis)


def _upwind_axis(u, vel, h_over_dx, axis):
    """``u + h (F+ D+ u + F- D- u)`` along ``axis``; one backward step of transport."""
    p = _ghost_pad(u, axis)
    n = u.shape[axis]
    sl = lambda a, b: tuple(slice(a, b) if i == axis else slice(None) for i in range(u.ndim))
    fwd = p[sl(2, n + 2)] - p[sl(1, n + 1)]
    bwd = p[sl(1, n + 1)] - p[sl(0, n)]
    return u + h_over_dx * (np.maximum(vel, 0.0) * fwd + np.minimum(vel, 0.0) * bwd)


def _total_variation(u) -> float:
    return float(sum(np.sum(np.abs(np.diff(u, axis=a))) for a in range(u.ndim)))


def upwind_backward(theta: ControlPath, grid: GridDensity, dt: float | None = None) -> AdjointField:
    """Explicit upwind finite differences from ``psi_T = l`` back to ``t = 0``.

    ``grid`` supplies the x-nodes (cell centers). Directions are Lie-split in
    d = 2. ``meta['tv_growth']`` logs the per-layer total-variation ratio of
    ``A`` as an oscillation indicator.
    """
    dt = theta.dt if dt is None else float(dt)
    sub = int(round(theta.dt / dt))
    if sub < 1 or abs(sub * dt - theta.dt) > 1e-12 * theta.dt:
        raise ValueError(f"time step {dt} does not divide the layer width {theta.dt}")
    if grid.k != theta.d:
        raise ValueError("grid dimension differs from the state dimension")
    d = theta.d
    pts = grid.mesh()
    dx = grid.spacing
    L = theta.n_layers
    A = np.empty((L + 1,) + grid.shape)
    B = np.empty((L + 1,) + grid.shape + (d,))
    A[L] = np.sum(pts ** 2, axis=-1)
    B[L] = pts
    tv, cs = [], []
    for n in range(L - 1, -1, -1):
        p = theta.layer(n)
        vel = eval_field(pts, p)
        c = courant_number(p, pts.reshape(-1, d), dt, dx)
        check_courant(c, f"upwind adjoint layer {n}")
        cs.append(c)
        a, b = A[n + 1].copy(), B[n + 1].copy()
        tv0 = _total_variation(a)
        for _ in range(sub):
            for ax in range(d):
                a = _upwind_axis(a, vel[..., ax], dt / dx[ax], ax)
                b = _upwind_axis(b, vel[..., ax][..., None], dt / dx[ax], ax)
        A[n], B[n] = a, b
        tv.append(_total_variation(a) / tv0 if tv0 > 0 else 1.0)
    warn_low_courant(cs, "upwind adjoint solve")
    meta = {"solver": "upwind", "dt": dt, "tv_growth": tv[::-1], "courant_max": max(cs)}
    return AdjointField(theta.times, grid, A, B, meta)


def upwind_backward_product(theta: ControlPath, xgrid: GridDensity, ynodes,
                            dt: float | None = None) -> np.ndarray:
    """Reference d = 1 solve on the full ``(x, y)`` product mesh; shape (L+1, nx, ny).

    The label direction carries zero velocity.
    """
    if theta.d != 1:
        raise ValueError("product solve implemented for d = 1")
    dt = theta.dt if dt is None else float(dt)
    sub = int(round(theta.dt / dt))
    x = xgrid.centers()[0]
    y = np.asarray(ynodes, float).ravel()
    psi = np.empty((theta.n_layers + 1, x.size, y.size))
    psi[-1] = (x[:, None] - y[None, :]) ** 2
    dx = xgrid.spacing[0]
    for n in range(theta.n_layers - 1, -1, -1):
        p = theta.layer(n)
        vel = eval_field(x[:, None], p)[:, 0][:, None]
        check_courant(courant_number(p, x[:, None], dt, [dx]), f"product adjoint layer {n}")
        u = psi[n + 1]
        for _ in range(sub):
            u = _upwind_axis(u, vel, dt / dx, 0)
        psi[n] = u
    return psi


def characteristic_field(theta: ControlPath, grid: GridDensity, scheme="rk4",
                         substeps=FINE_SUBSTEPS) -> AdjointField:
    """Exact nodal values: ``A = |Phi_(t,T)(x)|^2`` and ``B = Phi_(t,T)(x)`` per node."""
    pts = grid.mesh().reshape(-1, grid.k)
    L = theta.n_layers
    A = np.empty((L + 1,) + grid.shape)
    B = np.empty((L + 1,) + grid.shape + (grid.k,))
    for k, t in enumerate(theta.times):
        z = flow_map(t, theta.T, pts, theta, scheme, substeps)
        A[k] = np.sum(z ** 2, axis=1).reshape(grid.shape)
        B[k] = z.reshape(grid.shape + (grid.k,))
    return AdjointField(theta.times, grid, A, B, {"solver": "characteristic"})


def adjoint_grid(radius: float, theta: ControlPath, dx: float) -> GridDensity:
    return centered_grid(adjoint_box(radius, theta, dx), dx, theta.d)


# ---------------------------------------------------------------- barycentric adjoint

@dataclass
class BarycenterPath:
    x: np.ndarray
    y: np.ndarray
    times: np.ndarray
    sigma: np.ndarray  # (L+1, d): sigma-bar at each node
    states: np.ndarray  # (L+1, d): Phi_(T, t_k)(x)


def _sigma_rhs(z, s, p: ControlParams):
    return eval_field(z, p), -np.swapaxes(jac_x(z, p), -1, -2) @ s


def _rk4_sigma(z, s, p, h):
    k1z, k1s = _sigma_rhs(z, s, p)
    k2z, k2s = _sigma_rhs(z + 0.5 * h * k1z, s + 0.5 * h * k1s, p)
    k3z, k3s = _sigma_rhs(z + 0.5 * h * k2z, s + 0.5 * h * k2s, p)
    k4z, k4s = _sigma_rhs(z + h * k3z, s + h * k3s, p)
    return (z + h / 6 * (k1z + 2 * k2z + 2 * k3z + k4z),
            s + h / 6 * (k1s + 2 * k2s + 2 * k3s + k4s))


def _euler_sigma(z, s, p, h):
    dz, ds = _sigma_rhs(z, s, p)
    return z + h * dz, s + h * ds


def barycenter_between(t: float, x, y, theta: ControlPath, scheme="rk4",
                       substeps=FINE_SUBSTEPS) -> np.ndarray:
    """``sigma-bar(t, x, y)``: backward solve from ``-grad l(x, y)`` at ``T`` to ``t``."""
    _check_scheme(scheme)
    step = _rk4_sigma if scheme == "rk4" else _euler_sigma
    z = np.asarray(x, float)
    s = -loss_grad(x, y)[..., None]
    hmax = theta.dt / substeps
    for a, b, k in _segments(theta.T, t, theta):
        n = max(1, math.ceil(abs(b - a) / hmax - 1e-9))
        h = (b - a) / n
        p = theta.layer(k)
        for _ in range(n):
            z, s = step(z, s, p, h)
    return s[..., 0]


def barycenter_adjoint(x, y, theta: ControlPath, scheme="rk4",
                       substeps=FINE_SUBSTEPS) -> BarycenterPath:
    """``sigma-bar`` at every node for the terminal-time anchor ``(x, y)``."""
    x = np.asarray(x, float).reshape(-1)
    y = np.asarray(y, float).reshape(-1)
    sig = np.array([barycenter_between(t, x, y, theta, scheme, substeps) for t in theta.times])
    states = np.array([flow_map(theta.T, t, x, theta, scheme, substeps) for t in theta.times])
    return BarycenterPath(x, y, theta.times, sig, states)
