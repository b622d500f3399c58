"""Cost functionals, the exact reduced gradient, and data-dependence experiments."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .adjoint import loss, loss_grad
from .control import ShootingConfig, regularization, shooting
from .field import ControlPath, grad_theta
from .forward import FINE_SUBSTEPS, integrate_particles, variational_trajectory
from .measures import EmpiricalMeasure, GaussianSpec, sample_initial, wasserstein1

log = logging.getLogger(__name__)

__all__ = ["loss", "loss_grad", "CostBreakdown", "empirical_cost", "grad_reduced_terminal"]


@dataclass(frozen=True)
class CostBreakdown:
    terminal: float
    regularization: float

    @property
    def total(self) -> float:
        return self.terminal + self.regularization


def terminal_cost(theta: ControlPath, mu: EmpiricalMeasure, scheme="rk4", substeps=1) -> float:
    ens = integrate_particles(mu, theta, scheme, substeps)
    return float(np.mean(loss(ens.states[-1], mu.y)))


def empirical_cost(theta: ControlPath, mu0N: EmpiricalMeasure, lam, scheme="rk4",
                   substeps=1) -> CostBreakdown:
    """``(1/N) sum l(X_T^i, Y^i) + lam |theta|_2^2``."""
    return CostBreakdown(terminal_cost(theta, mu0N, scheme, substeps), regularization(theta, lam))


def grad_reduced_terminal(theta: ControlPath, mu0: EmpiricalMeasure, substeps: int = FINE_SUBSTEPS,
                          scheme: str = "rk4", density: bool = False) -> np.ndarray:
    """Derivative of the terminal cost with respect to each layer's parameters.

    The pointwise gradient ``(R_(t,T) grad_theta F(Phi_(0,t)))^T grad l(Phi_(0,T))``,
    averaged over the atoms, is integrated over each layer by Simpson's rule on
    the fine grid; ``R_(t,T) = R_(0,T) R_(0,t)^{-1}``. With ``density=True`` the
    per-layer average (the L2 gradient density) is returned instead.
    Shape (L, m). The terminal cost must be integrated with the same
    ``substeps`` for a finite-difference comparison.
    """
    if substeps % 2:
        raise ValueError("Simpson integration needs an even number of substeps")
    _, X, R = variational_trajectory(mu0.x, theta, substeps, scheme)
    gl = loss_grad(X[-1], mu0.y)  # (N, d)
    # a(t) = R_(t,T)^T grad l = R_(0,t)^{-T} R_(0,T)^T grad l
    v = np.einsum("nji,nj->ni", R[-1], gl)
    a = np.linalg.solve(np.swapaxes(R, -1, -2), np.broadcast_to(v, R.shape[:-1])[..., None])[..., 0]
    h = theta.dt / substeps
    simpson = np.ones(substeps + 1)
    simpson[1:-1:2] = 4
    simpson[2:-1:2] = 2
    simpson *= h / 3
    out = np.empty((theta.n_layers, theta.m))
    w = 1.0 / mu0.n
    for k in range(theta.n_layers):
        p = theta.layer(k)
        acc = np.zeros(theta.m)
        for s in range(substeps + 1):
            j = k * substeps + s
            gth = grad_theta(X[j], p, theta.with_bias)  # (N, d, m)
            acc += simpson[s] * w * np.einsum("ndm,nd->m", gth, a[j])
        out[k] = acc
    return out / theta.dt if density else out


def finite_difference_gradient(theta: ControlPath, mu0: EmpiricalMeasure, step: float = 1e-4,
                               substeps: int = FINE_SUBSTEPS, scheme="rk4") -> np.ndarray:
    """Central differences of the terminal cost in every layer parameter."""
    out = np.empty_like(theta.values)
    for k in range(theta.n_layers):
        for j in range(theta.m):
            v = theta.values.copy()
            v[k, j] += step
            up = terminal_cost(theta.replace(v), mu0, scheme, substeps)
            v[k, j] -= 2 * step
            dn = terminal_cost(theta.replace(v), mu0, scheme, substeps)
            out[k, j] = (up - dn) / (2 * step)
    return out


def gradient_lipschitz_ratio(theta1: ControlPath, theta2: ControlPath, mu0: EmpiricalMeasure) -> float:
    """``|grad J(theta1) - grad J(theta2)|_2 / |theta1 - theta2|_2`` with L2 gradient densities."""
    g1 = grad_reduced_terminal(theta1, mu0, density=True)
    g2 = grad_reduced_terminal(theta2, mu0, density=True)
    dg = float(np.sqrt(theta1.dt * np.sum((g1 - g2) ** 2)))
    return dg / (theta1 - theta2).norm2()


# ---------------------------------------------------------------- semiconvexity

@dataclass
class SemiconvexityRecord:
    zetas: list
    defects: list
    implied_L: list
    implied_L_max: float | None
    dist2: float

    def to_dict(self):
        return asdict(self)


def total_cost(theta: ControlPath, mu0: EmpiricalMeasure, lam, scheme="rk4") -> float:
    return empirical_cost(theta, mu0, lam, scheme).total


def semiconvexity_probe(theta1: ControlPath, theta2: ControlPath, mu0: EmpiricalMeasure, lam,
                        zetas=(0.0, 0.25, 0.5, 0.75, 1.0), scheme="rk4") -> SemiconvexityRecord:
    """Convexity defect ``J(mix) - mix J`` along the segment and the implied ``L``.

    The semiconvexity estimate ``defect <= -(2 lam - L) zeta (1 - zeta) |dtheta|^2 / 2``
    is equivalent to ``L >= 2 lam + 2 defect / (zeta (1 - zeta) |dtheta|^2)``.
    """
    if theta1.values.shape != theta2.values.shape or theta1.dt != theta2.dt:
        raise ValueError("control paths must share their grid and shape")
    j1 = total_cost(theta1, mu0, lam, scheme)
    j2 = total_cost(theta2, mu0, lam, scheme)
    dist2 = (theta1 - theta2).norm2() ** 2
    lam_s = float(np.min(np.atleast_1d(lam)))
    defects, implied = [], []
    for z in zetas:
        z = float(z)
        if z in (0.0, 1.0) or dist2 == 0.0:
            defects.append(0.0)
            implied.append(None)
            continue
        mix = theta1.scaled(1 - z) + theta2.scaled(z)
        dfc = total_cost(mix, mu0, lam, scheme) - ((1 - z) * j1 + z * j2)
        defects.append(float(dfc))
        implied.append(float(2 * lam_s + 2 * dfc / (z * (1 - z) * dist2)))
    vals = [v for v in implied if v is not None]
    return SemiconvexityRecord([float(z) for z in zetas], defects, implied,
                               max(vals) if vals else None, float(dist2))


# ---------------------------------------------------------------- generalization

@dataclass
class GapRecord:
    gap: float
    train_cost: float
    fresh_cost: float
    w1: float
    ratio: float


def generalization_gap(theta_star: ControlPath, train: EmpiricalMeasure, fresh: EmpiricalMeasure,
                       scheme="rk4") -> GapRecord:
    """``|terminal cost on fresh - terminal cost on train|`` against ``W1(train, fresh)``."""
    a = terminal_cost(theta_star, train, scheme)
    b = terminal_cost(theta_star, fresh, scheme)
    w1 = wasserstein1(train, fresh, cap=max(train.n, fresh.n))
    gap = abs(b - a)
    ratio = gap / w1 if w1 > 0 else (0.0 if gap == 0 else float("inf"))
    return GapRecord(gap, a, b, w1, ratio)


def accuracy(theta: ControlPath, samples: EmpiricalMeasure, radius: float, scheme="rk4") -> float:
    """Fraction of atoms ending strictly within ``radius`` of their labels."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    ens = integrate_particles(samples, theta, scheme)
    return float(np.mean(np.linalg.norm(ens.states[-1] - samples.y, axis=1) < radius))


# ---------------------------------------------------------------- double descent

def cell_seed(master: int, n: int, repeat: int, stream: int) -> int:
    """Seed of sweep cell ``(n, repeat)``; ``stream`` 0 trains, 1 tests."""
    return int(np.random.SeedSequence([master, n, repeat, stream]).generate_state(1)[0])


@dataclass
class DoubleDescentRecord:
    n: int
    repeats: int
    empirical_error: float
    empirical_error_std: float
    generalization_error: float
    generalization_error_std: float
    accuracy: float
    accuracy_std: float
    w1_to_reference: float
    w1_std: float
    rows: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d.pop("rows")
        return d


@dataclass
class SweepConfig:
    spec: GaussianSpec
    shooting: ShootingConfig
    seed: int = 0
    test_factor: int = 10
    n_ref: int = 5000
    radius: float = 0.5
    nested: bool = True  # repeat r reuses one training draw and one test set across n


def _std(v) -> float:
    return float(np.std(v)) if len(v) > 1 else 0.0


def double_descent_sweep(n_values, repeats: int, config: SweepConfig) -> list:
    """Train on fresh samples of each size; evaluate on large fresh test sets.

    Cell ``(n, r)`` draws its training set and its test set of size
    ``test_factor * max(n_values)`` from :func:`cell_seed`. With ``nested``
    the seeds depend on the repeat only: the training set of size ``n`` is the
    first ``n`` points of one draw and every ``n`` is scored on the same test
    set, so differences between sample sizes are not swamped by test noise.
    The W1 reference is one sample of size ``n_ref`` drawn with the master seed.
    """
    n_values = [int(n) for n in n_values]
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    ref = sample_initial(config.spec, config.n_ref, cell_seed(config.seed, 0, 0, 2))
    n_test = config.test_factor * max(n_values)
    n_max = max(n_values)
    out = []
    for n in n_values:
        rows = []
        for r in range(repeats):
            if config.nested:
                train = sample_initial(config.spec, n_max, cell_seed(config.seed, 0, r, 0)).subsample(n)
                test = sample_initial(config.spec, n_test, cell_seed(config.seed, 0, r, 1))
            else:
                train = sample_initial(config.spec, n, cell_seed(config.seed, n, r, 0))
                test = sample_initial(config.spec, n_test, cell_seed(config.seed, n, r, 1))
            scfg = replace(config.shooting, seed=cell_seed(config.seed, n, r, 3) % (2 ** 31))
            rep = shooting(scfg, train, config.spec)
            th = rep.final
            rows.append({
                "n": n, "repeat": r,
                "empirical_error": terminal_cost(th, train),
                "generalization_error": terminal_cost(th, test),
                "accuracy": accuracy(th, test, config.radius),
                "w1": wasserstein1(train, ref, cap=max(n, config.n_ref)),
            })
        col = lambda k: [row[k] for row in rows]
        out.append(DoubleDescentRecord(
            n, repeats,
            float(np.mean(col("empirical_error"))), _std(col("empirical_error")),
            float(np.mean(col("generalization_error"))), _std(col("generalization_error")),
            float(np.mean(col("accuracy"))), _std(col("accuracy")),
            float(np.mean(col("w1"))), _std(col("w1")), rows))
    return out


def trend_flags(records, key: str, increasing: bool = False) -> dict:
    """Weak monotonicity allowing one inversion no larger than one std."""
    means = [getattr(r, key) for r in records]
    stds = [getattr(r, key + "_std") for r in records]
    sign = 1 if increasing else -1
    inversions, within = 0, True
    for i in range(len(means) - 1):
        step = sign * (means[i + 1] - means[i])
        if step < 0:
            inversions += 1
            if -step > max(stds[i], stds[i + 1]):
                within = False
    return {"key": key, "increasing": increasing, "inversions": inversions,
            "ok": inversions == 0 or (inversions == 1 and within)}


SWEEP_COLUMNS = ["n", "repeat", "empirical_error", "generalization_error", "accuracy", "w1"]


def write_sweep(records, directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for rec in records:
            for row in rec.rows:
                w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    summary = {
        "records": [r.to_dict() for r in records],
        "trends": {
            "empirical_error_decreasing": trend_flags(records, "empirical_error"),
            "generalization_error_decreasing": trend_flags(records, "generalization_error"),
            "accuracy_increasing": trend_flags(records, "accuracy", increasing=True),
        },
    }
    (directory / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary
