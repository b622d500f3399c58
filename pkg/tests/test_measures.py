import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wasserstein_distance

from mfpmp.measures import (EmpiricalMeasure, GaussianSpec, GridDensity, MeasureError,
                            centered_grid, gaussian_density_1d, kde, sample_initial,
                            silverman_bandwidth, support_radius, wasserstein1,
                            wasserstein1_1d, wasserstein1_points)


def test_empirical_measure_rejects_bad_shapes():
    with pytest.raises(MeasureError):
        EmpiricalMeasure(np.zeros((3, 1)), np.zeros((2, 1)))
    with pytest.raises(MeasureError):
        EmpiricalMeasure(np.array([[np.nan]]), np.array([[1.0]]))


def test_empirical_csv_roundtrip(tmp_path, bimodal_1d):
    _, mu = bimodal_1d
    mu.to_csv(tmp_path / "mu.csv")
    back = EmpiricalMeasure.from_csv(tmp_path / "mu.csv")
    np.testing.assert_array_equal(back.x, mu.x)
    np.testing.assert_array_equal(back.y, mu.y)


def test_sample_initial_is_reproducible_and_labelled():
    spec = GaussianSpec.bimodal(2)
    a = sample_initial(spec, 50, 7)
    b = sample_initial(spec, 50, 7)
    np.testing.assert_array_equal(a.x, b.x)
    assert np.all((a.y[:, 0] > 0) == (a.x[:, 0] > 0))
    assert set(np.unique(a.y)) == {-2.0, 2.0}


def test_class_cell_mass_sums_to_one():
    spec = GaussianSpec.bimodal(2, std=0.2)
    g = centered_grid(3.0, 0.1, 2)
    tot = spec.class_cell_mass(g, True) + spec.class_cell_mass(g, False)
    assert tot.sum() == pytest.approx(1.0, abs=1e-10)
    # positive class means half the mass (centers at +/-1 are symmetric)
    assert spec.class_cell_mass(g, True).sum() == pytest.approx(0.5, abs=1e-10)


def test_gaussian_spec_rejects_nonpositive_std():
    with pytest.raises(MeasureError):
        GaussianSpec.bimodal(1, std=0.0)


def test_support_radius():
    mu = EmpiricalMeasure([[3.0], [0.0]], [[4.0], [0.0]])
    assert support_radius(mu) == pytest.approx(5.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2 ** 16))
def test_w1_1d_matches_scipy(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(1.0, 2.0, size=m)
    assert wasserstein1_1d(a, b) == pytest.approx(wasserstein_distance(a, b), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2 ** 16))
def test_w1_points_metric_properties(n, seed):
    rng = np.random.default_rng(seed)
    p, q, r = (rng.normal(size=(n, 2)) for _ in range(3))
    assert wasserstein1_points(p, p) == pytest.approx(0.0, abs=1e-12)
    assert wasserstein1_points(p, q) == pytest.approx(wasserstein1_points(q, p), abs=1e-12)
    assert wasserstein1_points(p, r) <= wasserstein1_points(p, q) + wasserstein1_points(q, r) + 1e-9


def test_w1_translation():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(30, 2))
    shift = np.array([0.3, -0.4])
    assert wasserstein1_points(p, p + shift) == pytest.approx(0.5, abs=1e-12)


def test_w1_unequal_sizes_uses_transport():
    # one atom against two: cost is the mean distance
    assert wasserstein1_points([[0.0, 0.0]], [[1.0, 0.0], [0.0, 2.0]]) == pytest.approx(1.5)


def test_w1_cap_refuses():
    with pytest.raises(MeasureError):
        wasserstein1_points(np.zeros((10, 1)), np.zeros((10, 1)), cap=5)


def test_w1_joint_space_line_shortcut():
    mu = EmpiricalMeasure([[0.0], [1.0]], [[2.0], [2.0]])
    nu = EmpiricalMeasure([[0.5], [3.0]], [[2.0], [2.0]])
    assert wasserstein1(mu, nu) == pytest.approx(wasserstein1_1d([0, 1], [0.5, 3.0]))


def test_centered_grid_nodes():
    g = centered_grid(1.0, 0.5, 1)
    np.testing.assert_allclose(g.centers()[0], [-1.0, -0.5, 0.0, 0.5, 1.0])
    assert g.spacing[0] == pytest.approx(0.5)


def test_grid_density_rejects_negative_unless_signed():
    with pytest.raises(MeasureError):
        GridDensity([0.0], [1.0], np.array([-1.0, 1.0]))
    GridDensity([0.0], [1.0], np.array([-1.0, 1.0]), signed=True)


def test_grid_csv_roundtrip(tmp_path):
    g = centered_grid(1.0, 0.25, 2)
    g = g.like(np.random.default_rng(0).random(g.shape)).normalized()
    g.meta["layer"] = 3
    g.to_csv(tmp_path / "g.csv")
    back = GridDensity.from_csv(tmp_path / "g.csv")
    np.testing.assert_allclose(back.values, g.values)
    assert back.meta == {"layer": 3}


def test_kde_unit_mass_and_moments():
    rng = np.random.default_rng(5)
    pts = rng.normal(0.5, 0.3, size=(4000, 1))
    g = kde(pts, centered_grid(3.0, 0.02, 1))
    assert g.mass == pytest.approx(1.0, abs=1e-12)
    mean, cov = g.moments()
    assert mean[0] == pytest.approx(0.5, abs=0.02)
    h = silverman_bandwidth(pts)[0]
    # kernel smoothing adds h^2 to the variance
    assert cov[0, 0] == pytest.approx(0.09 + h ** 2, rel=0.08)


def test_kde_matches_gaussian_for_single_point():
    g = kde(np.array([[0.0]]), centered_grid(2.0, 0.01, 1), bandwidth=0.2)
    c = g.centers()[0]
    np.testing.assert_allclose(g.values, gaussian_density_1d(c, 0.0, 0.2), atol=2e-3)


def test_grid_sample_stays_in_box():
    g = kde(np.zeros((5, 2)), centered_grid(1.0, 0.1, 2), bandwidth=0.3)
    s = g.sample(500, np.random.default_rng(0))
    assert np.all(s >= g.lower) and np.all(s <= g.upper)


def test_degenerate_std_collapses_to_centers():
    spec = GaussianSpec.bimodal(1, std=1e-14)
    mu = sample_initial(spec, 50, 0)
    np.testing.assert_allclose(np.abs(mu.x), 1.0, atol=1e-12)


def test_unimodal_label_split_reproducible():
    spec = GaussianSpec.unimodal(1)
    frac = [np.mean(sample_initial(spec, 1000, 42).y[:, 0] > 0) for _ in range(2)]
    assert frac[0] == frac[1]
    assert set(np.unique(sample_initial(spec, 1000, 42).y)) == {-1.0, 1.0}


def test_w1_small_examples():
    zero = EmpiricalMeasure([[0.0]], [[0.0]])
    assert wasserstein1(zero, zero) == 0.0
    assert wasserstein1_1d([0.0, 2.0], [1.0, 3.0]) == pytest.approx(1.0)
    assert wasserstein1_points([[0.0], [2.0]], [[1.0], [3.0]]) == pytest.approx(1.0)


def test_w1_kantorovich_lower_bound():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=40), rng.normal(0.7, 1.5, size=40)
    w = wasserstein1_1d(a, b)
    for _ in range(50):
        knots = np.sort(rng.uniform(-5, 5, 8))
        slopes = rng.uniform(-1, 1, 9)
        # piecewise-linear with |slope| <= 1, hence 1-Lipschitz
        phi = lambda z: np.array([np.sum(slopes[0] * min(v, knots[0]) +
                                         sum(s * np.clip(v - k0, 0, k1 - k0) for s, k0, k1
                                             in zip(slopes[1:-1], knots[:-1], knots[1:]))
                                         + slopes[-1] * max(v - knots[-1], 0)) for v in z])
        assert abs(phi(a).mean() - phi(b).mean()) <= w + 1e-9


def test_kde_symmetric_pair():
    g = kde(np.array([[-0.3], [0.3]]), centered_grid(2.0, 0.05, 1), bandwidth=0.2)
    np.testing.assert_allclose(g.values, g.values[::-1], atol=1e-12)


def test_kde_narrow_kernel_stays_local():
    g = kde(np.array([[0.0]]), centered_grid(1.0, 0.1, 1), bandwidth=1e-3)
    assert g.mass == pytest.approx(1.0, abs=1e-10)
    assert g.values[10] * g.cell_volume == pytest.approx(1.0, abs=1e-10)


def test_kde_standard_normal_l1_error():
    pts = np.random.default_rng(0).standard_normal((10000, 1))
    g = kde(pts, centered_grid(6.0, 0.05, 1))
    c = g.centers()[0]
    assert np.sum(np.abs(g.values - gaussian_density_1d(c))) * 0.05 < 0.05


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 2.0), st.integers(1, 2))
def test_kde_unit_mass_property(n, h, k):
    pts = np.random.default_rng(n).normal(size=(n, k))
    assert kde(pts, centered_grid(3.0, 0.25, k), bandwidth=h).mass == pytest.approx(1.0, abs=1e-10)


def test_kde_errors():
    with pytest.raises(MeasureError):
        kde(np.zeros((0, 1)), centered_grid(1.0, 0.1, 1))
    with pytest.raises(MeasureError):
        kde(np.zeros((3, 1)), centered_grid(1.0, 0.1, 1), bandwidth=0.0)


def test_support_radius_examples():
    assert support_radius(EmpiricalMeasure([[0.0]], [[0.0]])) == 0.0
    assert support_radius(EmpiricalMeasure([[1.0], [0.0]], [[0.0], [-3.0]])) == pytest.approx(3.0)
