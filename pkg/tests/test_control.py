import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import load_schema
from mfpmp.control import (BracketError, ShootingConfig, _Component, cfl_precheck,
                           contraction_diagnostics, expand_lambda, explicit_update,
                           frozen_fields, initial_guess, lambda_map, regularization, residual,
                           shooting, solve_component, solve_layer)
from mfpmp.field import ControlParams, ControlPath, eval_field
from mfpmp.forward import CFLError
from mfpmp.measures import GaussianSpec, sample_initial


def _layer_data(d, n, seed, with_bias=False):
    rng = np.random.default_rng(seed)
    m = d * d + (d if with_bias else 0)
    x = rng.normal(size=(n, d))
    g = rng.normal(size=(n, d))
    return rng.normal(size=m), x, g


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.booleans(), st.integers(0, 2 ** 16))
def test_residual_is_scaled_hamiltonian_gradient(d, wb, seed):
    vec, x, g = _layer_data(d, 15, seed, wb)
    lam = 0.3

    def ham(v):
        p = ControlParams.from_flat(v, d, wb)
        return lam * v @ v + np.mean(np.sum(g * eval_field(x, p), axis=1))

    h = 1e-6
    num = np.array([(ham(vec + h * e) - ham(vec - h * e)) / (2 * h) for e in np.eye(vec.size)])
    p = ControlParams.from_flat(vec, d, wb)
    np.testing.assert_allclose(residual(p, 0.0, x, g, lam, wb), num / (2 * lam), atol=1e-7)


def test_component_restriction_matches_residual():
    vec, x, g = _layer_data(2, 20, 4, True)
    w = np.full(20, 1 / 20)
    for j in range(vec.size):
        comp = _Component(vec, j, x, g, w, 0.2, 2, True)
        for s in (-1.0, 0.3):
            v = vec.copy()
            v[j] = s
            res = residual(ControlParams.from_flat(v, 2, True), 0.0, x, g, 0.2, True)
            assert comp(s) == pytest.approx(res[j], abs=1e-12)
        h = 1e-6
        assert comp.deriv(0.1) == pytest.approx((comp(0.1 + h) - comp(0.1 - h)) / (2 * h), rel=1e-6)


class _Cubic:
    def __call__(self, s):
        s = np.asarray(s, float)
        return s ** 3 - s

    def deriv(self, s):
        return 3 * s ** 2 - 1


@pytest.mark.parametrize("solver", ["brent", "bisection", "newton"])
def test_solve_component_picks_root_nearest_previous(solver):
    root, mult = solve_component(_Cubic(), 0.8, solver, 3.0, 1e-10, 801)
    assert root == pytest.approx(1.0, abs=1e-9)
    assert mult == 3
    root, _ = solve_component(_Cubic(), -0.7, solver, 3.0, 1e-10, 801)
    assert root == pytest.approx(-1.0, abs=1e-9)


def test_solve_component_no_sign_change():
    class Pos:
        def __call__(self, s):
            return np.asarray(s, float) ** 2 + 1
    with pytest.raises(BracketError):
        solve_component(Pos(), 0.0, "brent", 2.0, 1e-8, 101)


@pytest.mark.parametrize("solver", ["brent", "bisection", "newton"])
def test_solve_layer_zeroes_residual(solver):
    _, x, g = _layer_data(2, 30, 9)
    y = np.zeros_like(x)
    info = {}
    p = solve_layer(0.0, (x, y), g, 0.5, solver, 10.0, 1e-10, info=info)
    assert np.max(np.abs(residual(p, 0.0, x, g, 0.5))) < 1e-10
    assert info["residual"] < 1e-10 and info["multiplicity"] >= 1


def test_solvers_agree():
    _, x, g = _layer_data(1, 40, 2)
    y = np.zeros_like(x)
    roots = [solve_layer(0.0, (x, y), g, 0.1, s, 10.0, 1e-11).W[0, 0]
             for s in ("brent", "bisection", "newton")]
    assert np.ptp(roots) < 1e-9


def test_explicit_update_fixed_point_relation():
    vec, x, g = _layer_data(1, 25, 1)
    p = ControlParams.from_flat(vec, 1, False)
    upd = explicit_update(p, x, g, 0.2)
    np.testing.assert_allclose(vec - upd, residual(p, 0.0, x, g, 0.2))


def test_expand_lambda_and_regularization():
    np.testing.assert_array_equal(expand_lambda((1.0, 2.0), 2, True), [1, 1, 1, 1, 2, 2])
    np.testing.assert_array_equal(expand_lambda(0.5, 2, False), [0.5] * 4)
    th = ControlPath.constant(1.0, 20, 0.05, 1)
    assert regularization(th, 0.1) == pytest.approx(0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        ShootingConfig(lam=-1.0)
    with pytest.raises(ValueError):
        ShootingConfig(dt=0.3)
    with pytest.raises(ValueError):
        ShootingConfig(root_solver="secant")
    with pytest.raises(ValueError):
        ShootingConfig(forward_solver="spectral")
    assert ShootingConfig().n_layers == 20


def test_cfl_precheck():
    assert cfl_precheck(ShootingConfig(), 1) == pytest.approx(0.5)
    with pytest.raises(CFLError):
        cfl_precheck(ShootingConfig(dx=0.05), 1)
    # finer grid time steps restore the condition
    assert cfl_precheck(ShootingConfig(dx=0.05, grid_substeps=2), 1) == pytest.approx(0.5)
    # particles with characteristic adjoints never touch a grid time step
    cfl_precheck(ShootingConfig(dx=0.01, adjoint_solver="characteristic"), 1)


def test_initial_guess_modes():
    cfg = ShootingConfig(init="random", seed=5)
    a, b = initial_guess(cfg, 2), initial_guess(cfg, 2)
    np.testing.assert_array_equal(a.values, b.values)
    assert np.all((a.values >= 0) & (a.values < 1))
    assert initial_guess(ShootingConfig(init=1.0), 1).values.sum() == pytest.approx(20.0)


def test_contraction_diagnostics_synthetic():
    s = contraction_diagnostics([1.0, 0.5, 0.25, 0.1])
    assert s.monotone_after_2 and not s.oscillating
    s = contraction_diagnostics([1.0, 2.0, 0.25, 0.3])
    assert s.oscillating and not s.monotone_after_2
    # growth between the first two steps is not checked
    assert not contraction_diagnostics([1.0, 2.0, 1.0, 0.5]).oscillating
    # round-off steps are ignored
    assert not contraction_diagnostics([1.0, 0.1, 1e-13, 2e-13]).oscillating
    with pytest.raises(ValueError):
        contraction_diagnostics([1.0])


@pytest.fixture(scope="module")
def short_run():
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 40, 0)
    cfg = ShootingConfig(lam=0.1, outer_iters=4)
    return spec, mu, cfg, shooting(cfg, mu, spec)


def test_shooting_report_shapes_and_schema(short_run, tmp_path):
    _, _, _, rep = short_run
    assert rep.iterations == 4 and len(rep.thetas) == 5
    assert len(rep.costs) == 5 and len(rep.residuals) == 4
    # the residual of an iterate equals the distance to the explicit map
    assert all(c >= t for c, t in zip(rep.costs, rep.terminal))
    rep.to_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    data["contraction"] = contraction_diagnostics(rep).to_dict()
    jsonschema.validate(data, load_schema("report.schema.json"))
    assert "wall_times" not in data


def test_shooting_is_deterministic(short_run):
    spec, mu, cfg, rep = short_run
    again = shooting(cfg, mu, spec)
    assert again.eps == rep.eps
    np.testing.assert_array_equal(again.final.values, rep.final.values)


def test_eps_matches_successive_iterates(short_run):
    *_, rep = short_run
    for k, e in enumerate(rep.eps):
        assert e == pytest.approx((rep.thetas[k + 1] - rep.thetas[k]).norm2())


def test_lambda_map_is_identity_at_fixed_point():
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 30, 1)
    cfg = ShootingConfig(lam=1.0, outer_iters=60, stop_tol=1e-11)
    rep = shooting(cfg, mu, spec)
    th = rep.final
    assert (lambda_map(th, mu, cfg, spec) - th).norm2() < 1e-9
    assert rep.final_residual < 1e-9


def test_stop_tol_ends_early():
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 30, 1)
    rep = shooting(ShootingConfig(lam=1.0, outer_iters=100, stop_tol=1e-3), mu, spec)
    assert rep.iterations < 100 and rep.eps[-1] < 1e-3


def test_finite_volume_backend_conserves_mass():
    spec = GaussianSpec.bimodal(1)
    mu = sample_initial(spec, 40, 0)
    cfg = ShootingConfig(lam=0.1, outer_iters=2, forward_solver="finitevolume")
    rep = shooting(cfg, mu, spec)
    assert all(m["fv_mass_drift"] < 1e-12 for m in rep.forward_meta)


def test_characteristic_adjoint_close_to_upwind(short_run):
    spec, mu, cfg, rep = short_run
    from dataclasses import replace
    alt = shooting(replace(cfg, adjoint_solver="characteristic"), mu, spec)
    assert (alt.final - rep.final).norm2() < 0.1


def test_frozen_fields_quadrature_weights(short_run):
    spec, mu, cfg, rep = short_run
    from dataclasses import replace
    f = frozen_fields(rep.thetas[1], mu, replace(cfg, forward_solver="finitevolume"), spec)
    for q in f.nodes:
        assert q.w.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(q.w > 0)
