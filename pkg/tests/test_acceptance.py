"""The eleven acceptance criteria at their stated tolerances.

Expensive runs are cached per module. Each test records one verdict line,
printed in the terminal summary. Criteria whose outcome is known to miss are
marked ``xfail(strict=True)`` so that an unexpected pass is also reported.
"""
import time

import numpy as np
import pytest

from mfpmp.adjoint import barycenter_between, characteristic_psi
from mfpmp.control import ShootingConfig, contraction_diagnostics, shooting
from mfpmp.cost import (SweepConfig, accuracy, double_descent_sweep, finite_difference_gradient,
                        generalization_gap, grad_reduced_terminal, trend_flags)
from mfpmp.field import ControlPath
from mfpmp.forward import flow_map, integrate_particles, stability_exponent
from mfpmp.measures import (GaussianSpec, sample_initial, support_radius, wasserstein1,
                            wasserstein1_1d, wasserstein1_points)

CONVERGED = dict(lam=0.1, outer_iters=700, stop_tol=1e-9)
FV_TOL = 0.05       # particle vs finite volume at dx=0.1; observed 0.029, O(dx)
GAP_CONSTANT = 0.25  # gap / W1; observed at most 0.09 over N in 10..200
MC_REPEATS = 4


@pytest.fixture(scope="module")
def bimodal():
    spec = GaussianSpec.bimodal(1)
    return spec, sample_initial(spec, 200, 0)


@pytest.fixture(scope="module")
def run15(bimodal):
    spec, mu = bimodal
    t0 = time.perf_counter()
    rep = shooting(ShootingConfig(lam=0.1, outer_iters=15, root_tol=1e-8), mu, spec)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def conv1d(bimodal):
    spec, mu = bimodal
    return shooting(ShootingConfig(**CONVERGED), mu, spec)


@pytest.fixture(scope="module")
def conv_fv(bimodal):
    spec, mu = bimodal
    return shooting(ShootingConfig(forward_solver="finitevolume", **CONVERGED), mu, spec)


def test_c01_gradient_oracle(criterion):
    rng = np.random.default_rng(101)
    spec = GaussianSpec.bimodal(1)
    t0 = time.perf_counter()
    worst = 0.0
    for c in range(10):
        th = ControlPath(rng.normal(0.3, 0.8, (20, 1)), 0.05, 1)
        mu = sample_initial(spec, 50, 500 + c)
        g = grad_reduced_terminal(th, mu)
        fd = finite_difference_gradient(th, mu)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.abs(fd))))
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 120
    criterion(1, ok, f"max rel err {worst:.2e} < 1e-4 over 10 configs, {secs:.1f}s < 120s")
    assert ok


@pytest.mark.xfail(strict=True, reason="15 iterations reach eps ~ 0.4; the contraction rate is ~0.93")
def test_c02_self_consistency(criterion, run15):
    rep, secs = run15
    diag = contraction_diagnostics(rep)
    res_ok = rep.final_residual < 10 * 1e-8
    ok = diag.monotone_after_2 and res_ok and secs < 300
    criterion(2, ok, f"eps strictly decreasing from eps(2): {diag.monotone_after_2}; "
                     f"|theta - Lambda(theta)| = {rep.final_residual:.2e} (need < 1e-7); "
                     f"eps(15) = {rep.eps[-1]:.2e}; {secs:.0f}s")
    assert ok


def test_c03_initial_guess_independence(criterion, bimodal, conv1d):
    spec, mu = bimodal
    finals = [conv1d.final]
    for init in (1.0, "random"):
        finals.append(shooting(ShootingConfig(init=init, seed=3, **CONVERGED), mu, spec).final)
    diffs = [(a - b).norm2() for i, a in enumerate(finals) for b in finals[i + 1:]]
    ok = max(diffs) < 1e-3
    criterion(3, ok, f"max pairwise |dtheta| {max(diffs):.1e} < 1e-3 for inits 0, 1, random")
    assert ok


def test_c04_classification(criterion, bimodal, conv1d):
    spec2 = GaussianSpec.bimodal(2)
    mu2 = sample_initial(spec2, 200, 0)
    rep2 = shooting(ShootingConfig(lam=0.1, outer_iters=700, stop_tol=1e-7), mu2, spec2)
    a1 = accuracy(conv1d.final, bimodal[1], 0.5)
    a2 = accuracy(rep2.final, mu2, 0.5)
    ok = conv1d.converged and rep2.converged and min(a1, a2) >= 0.95
    criterion(4, ok, f"accuracy 1D {a1:.3f}, 2D {a2:.3f} (>= 0.95, radius 0.5); "
                     f"converged in {conv1d.iterations} / {rep2.iterations} iterations")
    assert ok


def test_c05_regularization(criterion, bimodal, conv1d):
    spec, mu = bimodal
    strong = shooting(ShootingConfig(lam=10.0, outer_iters=700, stop_tol=1e-9), mu, spec)
    a_strong = accuracy(strong.final, mu, 0.5)
    a_mid = accuracy(conv1d.final, mu, 0.5)
    uni = GaussianSpec.unimodal(1)
    weak = shooting(ShootingConfig(lam=1e-5, outer_iters=15, bracket=200.0),
                    sample_initial(uni, 200, 0), uni)
    diag = contraction_diagnostics(weak)
    weak_bi = contraction_diagnostics(shooting(ShootingConfig(lam=1e-5, outer_iters=15), mu, spec))
    ok = a_strong < 0.5 and a_mid >= 0.95 and diag.oscillating
    criterion(5, ok, f"lam=10 accuracy {a_strong:.3f} < 0.5; lam=0.1 accuracy {a_mid:.3f} >= 0.95; "
                     f"lam=1e-5 unimodal oscillating={diag.oscillating} (max ratio "
                     f"{diag.max_ratio_after_2:.2f}); bimodal max ratio {weak_bi.max_ratio_after_2:.2f}")
    assert ok


def test_c06_solver_agreement(criterion, bimodal, conv1d, conv_fv, run15):
    spec, mu = bimodal
    d_fv = (conv_fv.final - conv1d.final).norm2()
    ref = run15[0].final
    mcs = np.array([shooting(ShootingConfig(lam=0.1, forward_solver="montecarlo", seed=7919 * r),
                             mu, spec).final.values for r in range(MC_REPEATS)])
    mean = ref.replace(mcs.mean(axis=0))
    std = ref.replace(mcs.std(axis=0, ddof=1))
    d_mc = (mean - ref).norm2()
    ok = d_fv <= FV_TOL and d_mc <= 3 * std.norm2()
    criterion(6, ok, f"|theta_FV - theta_P| {d_fv:.4f} <= {FV_TOL}; |mean_MC - theta_P| "
                     f"{d_mc:.3f} <= 3 std = {3 * std.norm2():.3f} ({MC_REPEATS} MC runs, 15 its)")
    assert ok


def test_c07_conservation_and_support(criterion, bimodal, conv_fv, run15, conv1d):
    spec, mu = bimodal
    drift = max(m["fv_mass_drift"] for m in conv_fv.forward_meta)
    bound = support_radius(mu) + np.sqrt(mu.dim) * 1.0
    worst = 0.0
    for rep in (run15[0], conv1d):
        for th in rep.thetas:
            worst = max(worst, integrate_particles(mu, th).max_radius())
    ok = drift < 1e-12 and worst <= bound
    criterion(7, ok, f"FV mass drift {drift:.1e} < 1e-12; max particle radius {worst:.3f} "
                     f"<= R + sqrt(d) T = {bound:.3f} on all iterates")
    assert ok


def test_c08_adjoint_link(criterion, conv1d):
    th = conv1d.final
    rng = np.random.default_rng(808)
    h = 1e-5
    worst = 0.0
    for _ in range(50):
        t = float(rng.uniform(0, th.T))
        x = rng.normal(rng.choice([-1.0, 1.0]), 0.3, size=1)
        y = rng.choice([-2.0, 2.0], size=1)
        z = flow_map(th.T, t, x, th)
        fd = (characteristic_psi(t, z + h, y, th) - characteristic_psi(t, z - h, y, th)) / (2 * h)
        sig = barycenter_between(t, x, y, th)
        worst = max(worst, float(abs(fd + sig[0]) / abs(sig[0])))
    ok = worst < 1e-4
    criterion(8, ok, f"max rel err |grad psi + sigma-bar| / |sigma-bar| {worst:.1e} < 1e-4 at 50 points")
    assert ok


def test_c09_stability(criterion, conv1d):
    rng = np.random.default_rng(909)
    worst = 0.0
    for i in range(20):
        d = 1 + i % 2
        th = ControlPath(rng.normal(0.0, 1.0, (20, d * d)), 0.05, d)
        s1 = GaussianSpec.bimodal(d, std=float(rng.uniform(0.05, 0.5)))
        s2 = GaussianSpec.unimodal(d, std=float(rng.uniform(0.2, 1.0)))
        m1, m2 = sample_initial(s1, 40, 2 * i), sample_initial(s2, 40, 2 * i + 1)
        e1, e2 = integrate_particles(m1, th), integrate_particles(m2, th)
        w0 = wasserstein1(m1, m2)
        # exponent accumulated layer by layer; at T it equals stability_exponent
        expo = np.concatenate([[0.0], np.cumsum(th.dt * (1 + np.linalg.norm(th.values, axis=1)))])
        assert expo[-1] == pytest.approx(stability_exponent(th))
        for k in range(1, th.n_layers + 1):
            worst = max(worst, wasserstein1(e1.at(k), e2.at(k)) / (np.exp(expo[k]) * w0))
    spec = GaussianSpec.bimodal(1)
    ratios = []
    for n in (10, 25, 50, 100, 200):
        for r in range(3):
            g = generalization_gap(conv1d.final, sample_initial(spec, n, 100 + r),
                                   sample_initial(spec, 2000, 200 + r))
            ratios.append(g.ratio)
    ok = worst <= 1.0 and max(ratios) <= GAP_CONSTANT
    criterion(9, ok, f"max W1_t / (e^L W1_0) {worst:.3f} <= 1 on 20 pairs; "
                     f"max gap/W1 {max(ratios):.3f} <= {GAP_CONSTANT}")
    assert ok


@pytest.mark.xfail(strict=True, reason="accuracy plateaus near 0.9925 and inverts twice by ~1e-4")
def test_c10_double_descent(criterion):
    t0 = time.perf_counter()
    cfg = SweepConfig(GaussianSpec.bimodal(1), ShootingConfig(lam=0.1, outer_iters=400, stop_tol=1e-6))
    recs = double_descent_sweep([10, 25, 50, 100, 200], 5, cfg)
    secs = time.perf_counter() - t0
    flags = [trend_flags(recs, "empirical_error"), trend_flags(recs, "generalization_error"),
             trend_flags(recs, "accuracy", increasing=True)]
    ok = all(f["ok"] for f in flags) and secs < 1200
    desc = "; ".join(f"{f['key']} inversions {f['inversions']} ok={f['ok']}" for f in flags)
    criterion(10, ok, f"{desc}; accuracy means "
                      f"{', '.join(f'{r.accuracy:.4f}' for r in recs)}; {secs:.0f}s < 1200s")
    assert ok


def test_c11_w1_equivalence(criterion):
    rng = np.random.default_rng(1111)
    worst = 0.0
    for _ in range(100):
        n, m = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        a, b = rng.normal(size=n), rng.normal(rng.uniform(-1, 1), rng.uniform(0.5, 2), size=m)
        worst = max(worst, abs(wasserstein1_1d(a, b) - wasserstein1_points(a, b)))
    ok = worst < 1e-9
    criterion(11, ok, f"max |sorted - matching| {worst:.1e} < 1e-9 on 100 instances")
    assert ok
