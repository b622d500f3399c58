"""Property suites behind ``mfpmp validate``; each returns a JSON-ready record."""
from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np

from . import cost
from .adjoint import barycenter_between, characteristic_psi
from .control import ShootingConfig, contraction_diagnostics, shooting
from .field import ControlPath
from .forward import finite_volume_forward, flow_map, integrate_particles
from .measures import (GaussianSpec, centered_grid, sample_initial,
                       wasserstein1_1d, wasserstein1_points)


def _record(suite, passed, summary, **details):
    return {"suite": suite, "passed": bool(passed), "summary": summary, "details": details}


def _random_path(rng, L=20, d=1, scale=0.8, with_bias=False):
    m = d * d + (d if with_bias else 0)
    return ControlPath(rng.normal(0.3, scale, (L, m)), 1.0 / L, d, with_bias)


def suite_gradient(n_configs=3, tol=1e-4, seed=11):
    rng = np.random.default_rng(seed)
    spec = GaussianSpec.bimodal(1)
    worst = 0.0
    for c in range(n_configs):
        th = _random_path(rng)
        mu = sample_initial(spec, 20, seed + c)
        g = cost.grad_reduced_terminal(th, mu)
        fd = cost.finite_difference_gradient(th, mu)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))))
    return _record("gradient", worst < tol, f"max rel err {worst:.2e} (tol {tol:g})",
                   max_rel_err=worst, configs=n_configs)


def suite_conservation(seed=12):
    rng = np.random.default_rng(seed)
    th = _random_path(rng, scale=0.5)
    grid = centered_grid(4.0, 0.1, 1)
    x = grid.centers()[0]
    rho0 = grid.like(np.exp(-0.5 * ((x - 0.5) / 0.3) ** 2)).normalized()
    sols = finite_volume_forward(rho0, th)
    drift = max(abs(s.mass + s.meta.get("outflow", 0.0) - rho0.mass) for s in sols)
    mass_err = max(abs(s.mass - rho0.mass) for s in sols)
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 200, seed)
    ens = integrate_particles(mu, th)
    r0 = float(np.max(np.abs(mu.x)))
    bound = r0 + th.T
    radius = ens.max_radius()
    ok = drift < 1e-12 and mass_err < 1e-12 and radius <= bound
    return _record("conservation", ok, f"mass drift {mass_err:.1e}, radius {radius:.3f} <= {bound:.3f}",
                   mass_drift=mass_err, flux_balance=drift, radius=radius, bound=bound)


def suite_w1(n_instances=20, seed=13):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 65))
        a, b = rng.normal(size=n), rng.normal(0.5, 2.0, size=n)
        worst = max(worst, abs(wasserstein1_1d(a, b) - wasserstein1_points(a, b)))
    return _record("w1", worst < 1e-9, f"max |sorted - matching| {worst:.1e}", max_abs_diff=worst)


def suite_adjoint_link(n_points=10, seed=14, tol=1e-4):
    rng = np.random.default_rng(seed)
    th = _random_path(rng, scale=0.5)
    worst = 0.0
    h = 1e-5
    for _ in range(n_points):
        t = float(rng.uniform(0, 1))
        x, y = rng.normal(size=1), rng.choice([-2.0, 2.0], size=1)
        sig = barycenter_between(t, x, y, th)
        z = flow_map(th.T, t, x, th)
        fd = (characteristic_psi(t, z + h, y, th) - characteristic_psi(t, z - h, y, th)) / (2 * h)
        worst = max(worst, float(abs(fd + sig[0]) / max(abs(sig[0]), 1e-8)))
    return _record("adjoint_link", worst < tol, f"max rel err {worst:.2e}", max_rel_err=worst)


def suite_contraction(seed=15):
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 100, seed)
    rep = shooting(ShootingConfig(lam=1.0, outer_iters=10), mu, spec)
    diag = contraction_diagnostics(rep)
    ok = diag.monotone_after_2 and not diag.oscillating
    return _record("contraction", ok, f"max ratio {diag.max_ratio_after_2:.3f}", **diag.to_dict())


def suite_end_to_end(seed=0):
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 200, seed)
    rep = shooting(ShootingConfig(lam=0.1, outer_iters=400, stop_tol=1e-8), mu, spec)
    acc = rep.accuracies[-1]
    ok = rep.converged and acc >= 0.95
    return _record("end_to_end", ok, f"converged={rep.converged} in {rep.iterations} its, "
                   f"accuracy {acc:.3f}", iterations=rep.iterations, accuracy=acc,
                   final_eps=rep.eps[-1])


FAST = (suite_gradient, suite_conservation, suite_w1)
FULL = FAST + (suite_adjoint_link, suite_contraction, suite_end_to_end)


@contextmanager
def _mutated(name):
    if name is None:
        yield
        return
    if name != "grad_theta":
        raise ValueError(f"unknown mutation {name!r}")
    original = cost.grad_theta

    def perturbed(x, theta, with_bias=False):
        return 1.01 * original(x, theta, with_bias)

    cost.grad_theta = perturbed
    try:
        yield
    finally:
        cost.grad_theta = original


def run(level: str = "fast", mutate: str | None = None) -> list:
    suites = FAST if level == "fast" else FULL
    out = []
    with _mutated(mutate):
        for fn in suites:
            t0 = time.perf_counter()
            rec = fn()
            rec["seconds"] = round(time.perf_counter() - t0, 3)
            out.append(rec)
    return out
