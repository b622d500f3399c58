"""Empirical and gridded probability measures on the data-label space.

A point of the joint space is a pair ``(x, y)`` with ``x, y`` in ``R^d``; the
ground metric on ``R^{2d}`` is Euclidean.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

#: exact solvers above this many points per side refuse instead of approximating
ASSIGNMENT_CAP = 512


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniformly weighted atoms ``(x_i, y_i)``; ``x`` and ``y`` have shape (N, d)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape:
            raise MeasureError(f"x {x.shape} and y {y.shape} differ in shape")
        if x.shape[0] < 1:
            raise MeasureError("an empirical measure needs at least one atom")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise MeasureError("non-finite atom")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def points(self) -> np.ndarray:
        """Joint coordinates, shape (N, 2d)."""
        return np.hstack([self.x, self.y])

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def with_x(self, x) -> "EmpiricalMeasure":
        return EmpiricalMeasure(x, self.y)

    def subsample(self, n: int) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.x[:n], self.y[:n])

    def to_csv(self, path) -> None:
        d = self.dim
        header = [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        d = sum(1 for h in header if h.startswith("x_"))
        if len(header) != 2 * d:
            raise MeasureError(f"malformed header {header}")
        body = body.reshape(-1, 2 * d)
        return cls(body[:, :d], body[:, d:])


@dataclass(frozen=True)
class GaussianSpec:
    """Isotropic Gaussian mixture in ``R^d``, labelled by the sign of ``x_1``.

    Points with a positive first coordinate get ``pos_label``, the others
    ``neg_label``.
    """

    centers: np.ndarray
    stds: np.ndarray
    pos_label: np.ndarray
    neg_label: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        stds = np.broadcast_to(np.asarray(self.stds, dtype=float), (centers.shape[0],)).copy()
        if np.any(stds <= 0):
            raise MeasureError("mode standard deviations must be positive")
        weights = (np.full(centers.shape[0], 1.0 / centers.shape[0]) if self.weights is None
                   else np.asarray(self.weights, dtype=float))
        weights = weights / weights.sum()
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "pos_label", np.asarray(self.pos_label, dtype=float).reshape(-1))
        object.__setattr__(self, "neg_label", np.asarray(self.neg_label, dtype=float).reshape(-1))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def bimodal(cls, d: int = 1, std: float = 0.1, offset: float = 1.0, label: float = 2.0):
        c = np.full(d, offset)
        return cls(np.vstack([c, -c]), std, np.full(d, label), np.full(d, -label))

    @classmethod
    def unimodal(cls, d: int = 1, std: float = 0.3, label: float = 1.0):
        return cls(np.zeros((1, d)), std, np.full(d, label), np.full(d, -label))

    def label(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        pos = x[:, 0] > 0
        return np.where(pos[:, None], self.pos_label[None, :], self.neg_label[None, :])

    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise MeasureError(f"sample size must be positive, got {n}")
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.centers[comp] + self.stds[comp, None] * rng.standard_normal((n, self.dim))

    def class_cell_mass(self, grid: "GridDensity", positive: bool) -> np.ndarray:
        """Exact mixture mass per cell of ``grid``, restricted to one label class."""
        edges = grid.edges()
        out = np.zeros(grid.shape)
        for c, s, w in zip(self.centers, self.stds, self.weights):
            factors = []
            for a, e in enumerate(edges):
                if a == 0:
                    lo = np.maximum(e[:-1], 0.0) if positive else e[:-1]
                    hi = e[1:] if positive else np.minimum(e[1:], 0.0)
                    hi = np.maximum(hi, lo)
                else:
                    lo, hi = e[:-1], e[1:]
                factors.append(ndtr((hi - c[a]) / s) - ndtr((lo - c[a]) / s))
            out += w * _outer(factors)
        return out


def sample_initial(spec: GaussianSpec, n: int, seed: int) -> EmpiricalMeasure:
    """Draw ``n`` labelled points; reproducible for a fixed ``seed``."""
    rng = np.random.default_rng(seed)
    x = spec.sample_x(n, rng)
    return EmpiricalMeasure(x, spec.label(x))


def support_radius(mu: EmpiricalMeasure) -> float:
    return float(np.max(np.linalg.norm(mu.points, axis=1)))


# ---------------------------------------------------------------- Wasserstein-1

def wasserstein1_1d(a, b, wa=None, wb=None) -> float:
    """W1 between weighted samples on the real line via the CDF difference."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    wa = np.full(a.size, 1.0 / a.size) if wa is None else np.asarray(wa, float) / np.sum(wa)
    wb = np.full(b.size, 1.0 / b.size) if wb is None else np.asarray(wb, float) / np.sum(wb)
    allv = np.concatenate([a, b])
    order = np.argsort(allv, kind="mergesort")
    allv = allv[order]
    signed = np.concatenate([wa, -wb])[order]
    cdf_gap = np.cumsum(signed)[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(allv)))


def wasserstein1_points(p, q, cap: int = ASSIGNMENT_CAP) -> float:
    """Exact W1 between uniform point clouds in ``R^k`` (Euclidean cost).

    Equal sizes reduce to a min-cost perfect matching; unequal sizes solve the
    transport problem with a network simplex.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if q.ndim == 1:
        q = q[:, None]
    if p.shape[1] != q.shape[1]:
        raise MeasureError(f"dimension mismatch {p.shape[1]} vs {q.shape[1]}")
    n, m = len(p), len(q)
    if max(n, m) > cap:
        raise MeasureError(f"exact W1 refused: {max(n, m)} points exceeds cap {cap}")
    cost = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=2)
    if n == m:
        r, c = linear_sum_assignment(cost)
        return float(cost[r, c].mean())
    return _transport_emd(cost, np.full(n, 1.0 / n), np.full(m, 1.0 / m))


def _transport_emd(cost, a, b) -> float:
    for backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{backend}", "1")
    import ot

    return float(ot.emd2(a, b, cost, numItermax=10_000_000))


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cap: int = ASSIGNMENT_CAP) -> float:
    """Exact W1 between two empirical measures on the joint (x, y) space."""
    if mu.dim != nu.dim:
        raise MeasureError(f"dimension mismatch {mu.dim} vs {nu.dim}")
    p, q = mu.points, nu.points
    both = np.vstack([p, q])
    varying = np.flatnonzero(np.ptp(both, axis=0) > 0)
    if varying.size <= 1:
        # support on a coordinate line: sorted coupling is exact
        col = varying[0] if varying.size else 0
        return wasserstein1_1d(p[:, col], q[:, col])
    return wasserstein1_points(p, q, cap=cap)


# ---------------------------------------------------------------- grids

@dataclass
class GridDensity:
    """Cell values on a uniform box mesh; ``values[i, j, ...]`` is a density.

    ``signed`` marks fields (e.g. adjoint snapshots) for which the unit-mass
    invariant does not apply.
    """

    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray
    signed: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.lower.size:
            raise MeasureError("values rank does not match box dimension")
        if not self.signed and np.any(self.values < 0):
            raise MeasureError("negative density value")

    @property
    def k(self) -> int:
        return self.lower.size

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def centers(self) -> list:
        return [self.lower[a] + (np.arange(n) + 0.5) * self.spacing[a]
                for a, n in enumerate(self.shape)]

    def edges(self) -> list:
        return [self.lower[a] + np.arange(n + 1) * self.spacing[a]
                for a, n in enumerate(self.shape)]

    def mesh(self) -> np.ndarray:
        """Cell centers, shape (*shape, k)."""
        return np.stack(np.meshgrid(*self.centers(), indexing="ij"), axis=-1)

    def like(self, values, signed=None) -> "GridDensity":
        return GridDensity(self.lower, self.upper, values,
                           self.signed if signed is None else signed, dict(self.meta))

    def normalized(self) -> "GridDensity":
        total = self.mass
        if total <= 0:
            raise MeasureError("cannot normalize a density with zero mass")
        return self.like(self.values / total)

    def moments(self) -> tuple:
        """Mean vector and covariance matrix of the density."""
        pts = self.mesh().reshape(-1, self.k)
        w = self.values.ravel() * self.cell_volume
        w = w / w.sum()
        mean = w @ pts
        dev = pts - mean
        return mean, (dev * w[:, None]).T @ dev

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Cell by probability, then uniform within the cell."""
        p = self.values.ravel() / self.values.sum()
        idx = rng.choice(p.size, size=n, p=p)
        sub = np.stack(np.unravel_index(idx, self.shape), axis=1)
        return self.lower + (sub + rng.random((n, self.k))) * self.spacing

    def to_csv(self, path) -> None:
        path = Path(path)
        pts = self.mesh().reshape(-1, self.k)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"c_{a}" for a in range(self.k)] + ["value"])
            for p, v in zip(pts, self.values.ravel()):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        side = {
            "lower": self.lower.tolist(), "upper": self.upper.tolist(),
            "shape": list(self.shape), "spacing": self.spacing.tolist(),
            "signed": bool(self.signed),
            "mass": None if self.signed else self.mass,
            "meta": self.meta,
        }
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        vals = np.array([float(r[-1]) for r in rows[1:]]).reshape(side["shape"])
        return cls(side["lower"], side["upper"], vals, side["signed"], side.get("meta", {}))


def centered_grid(half_width, dx, k: int) -> GridDensity:
    """Empty grid whose cell centers are the nodes ``-B, -B + dx, ..., B`` per axis."""
    half_width = np.broadcast_to(np.asarray(half_width, dtype=float), (k,))
    dx = np.broadcast_to(np.asarray(dx, dtype=float), (k,))
    n = np.rint(2 * half_width / dx).astype(int) + 1
    half = (n - 1) * dx / 2
    return GridDensity(-half - dx / 2, half + dx / 2, np.zeros(tuple(n)))


def silverman_bandwidth(points) -> np.ndarray:
    """Per-axis rule-of-thumb bandwidth ``sigma * (4 / ((k + 2) n))^(1/(k+4))``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, k = pts.shape
    sigma = pts.std(axis=0, ddof=1) if n > 1 else np.zeros(k)
    return sigma * (4.0 / ((k + 2) * n)) ** (1.0 / (k + 4))


def kde(points, grid: GridDensity, bandwidth=None) -> GridDensity:
    """Gaussian KDE on ``grid``, renormalized to unit mass.

    Cell values are kernel averages over each cell (differences of the normal
    CDF), which reduce to center evaluation for bandwidths above the spacing
    and stay well defined below it. Points outside the box are clipped to the
    boundary cells. ``bandwidth=None`` uses Silverman's rule per axis; a
    degenerate axis falls back to half the cell spacing.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise MeasureError("kde of an empty point set")
    if pts.shape[1] != grid.k:
        raise MeasureError(f"points of dim {pts.shape[1]} on a {grid.k}-d grid")
    if bandwidth is None:
        h = silverman_bandwidth(pts)
        h = np.where(h > 0, h, grid.spacing / 2)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (grid.k,))
        if np.any(h <= 0):
            raise MeasureError("bandwidth must be positive")
    cen = grid.centers()
    pts = np.clip(pts, [c[0] for c in cen], [c[-1] for c in cen])
    factors = []
    for a, e in enumerate(grid.edges()):
        z = (e[None, :] - pts[:, a:a + 1]) / h[a]
        factors.append(np.diff(ndtr(z), axis=1))
    vals = _outer_sum(factors) / pts.shape[0]
    vals = np.maximum(vals, 0.0)
    out = grid.like(vals, signed=False)
    if out.values.sum() <= 0:
        raise MeasureError("kde produced no mass on the grid")
    return out.normalized()


def _outer(factors) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def _outer_sum(factors) -> np.ndarray:
    """Sum over points of the outer product of per-axis weight rows."""
    letters = "abcdefgh"
    spec = ",".join(f"p{letters[a]}" for a in range(len(factors)))
    return np.einsum(f"{spec}->{letters[:len(factors)]}", *factors)


def gaussian_density_1d(x, mean=0.0, std=1.0):
    return np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))
