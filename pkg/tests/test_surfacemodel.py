import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import chebyshev as C

from synthlogs.logcentric import TWO_PI, Heightmap
from synthlogs.surfacemodel import (SK_ALPHA_RANGE, SK_M_RANGE, BaseShape, ClusterBump, GrainConfig, Grid,
                                    SurfaceKnot, SurfaceModelError, ThicknessModel, base_grid, compose_heightmap,
                                    dog_1d, dog_sigma1, eval_base_shape, eval_thickness, fit_base_shape,
                                    fit_surface_knot_patch, fit_thickness, footprint_imprint, fourier_basis,
                                    gabor_grain, knot_window, surface_knot_imprint, surface_knot_pinned)


def heightmap_of(fn, n_theta=64, n_l=100, l_min=0.0, l_max=5000.0):
    g = Grid(n_theta, n_l, l_min, l_max)
    T, L = np.meshgrid(g.theta_centers, g.l_centers)
    return Heightmap(fn(T, L), l_min, l_max)


# --- thickness ---------------------------------------------------------------

def test_thickness_without_clusters_is_a_line():
    t = ThicknessModel(-0.01, 150.0)
    l = np.linspace(0, 3000, 7)
    np.testing.assert_array_equal(eval_thickness(t, l), -0.01 * l + 150.0)


def test_thickness_peak_and_hand_value():
    t = ThicknessModel(-0.01, 150.0, (ClusterBump(1000.0, 3.0, 0.0, 50.0),))
    assert eval_thickness(t, 1000.0) == pytest.approx(-10.0 + 150.0 + 3.0, rel=1e-15)
    assert eval_thickness(t, 1050.0) == pytest.approx(150.0 - 10.5 + 3.0 * math.exp(-0.5), rel=1e-15)
    assert eval_thickness(t, 1050.0) == pytest.approx(141.32, abs=5e-3)


def test_thickness_rejects_nonpositive_width():
    with pytest.raises(SurfaceModelError):
        ThicknessModel(0.0, 100.0, ((100.0, 1.0, 0.0, 0.0),))


def test_fit_thickness_linear_exact():
    t = ThicknessModel(-0.004, 160.0)
    h = heightmap_of(lambda T, L: eval_thickness(t, L))
    fit = fit_thickness(h, [])
    assert fit.a == pytest.approx(-0.004, abs=1e-9) and fit.b == pytest.approx(160.0, abs=1e-9)


def test_fit_thickness_round_trip():
    t = ThicknessModel(-0.005, 150.0, ((1200.0, 3.0, 12.0, 45.0), (3000.0, 2.0, -8.0, 60.0)))
    h = heightmap_of(lambda T, L: eval_thickness(t, L), n_l=500)
    fit = fit_thickness(h, [1200.0, 3000.0])
    got = [fit.a, fit.b] + [v for c in fit.clusters for v in (c.alpha, c.beta, c.gamma)]
    want = [t.a, t.b] + [v for c in t.clusters for v in (c.alpha, c.beta, c.gamma)]
    np.testing.assert_allclose(got, want, rtol=1e-3)


def test_fit_thickness_slope_under_noise():
    t = ThicknessModel(-0.005, 150.0, ((2500.0, 3.0, 0.0, 50.0),))
    clean = heightmap_of(lambda T, L: eval_thickness(t, L), n_l=500)
    rng = np.random.default_rng(7)
    slopes = np.array([fit_thickness(clean.with_values(clean.values + rng.normal(0, 1.0, clean.values.shape)),
                                     [2500.0]).a for _ in range(100)])
    assert np.all(np.abs(slopes / t.a - 1.0) < 0.2)


def test_fit_thickness_degenerate():
    h = Heightmap(np.full((8, 16), 100.0), 0.0, 10.0, np.zeros((8, 16), dtype=bool))
    with pytest.raises(SurfaceModelError):
        fit_thickness(h, [])


# --- base shape --------------------------------------------------------------

def test_constant_heightmap_base_shape():
    bs = fit_base_shape(heightmap_of(lambda T, L: np.full(T.shape, 100.0)))
    assert bs.coeffs.size == 100
    assert bs.coeffs[0, 0] == pytest.approx(100.0, abs=1e-9)
    others = bs.coeffs.copy()
    others[0, 0] = 0.0
    assert np.abs(others).max() < 1e-9


def synth_from_coeffs(coeffs, n_theta=64, n_l=120, l_min=0.0, l_max=3000.0):
    # evaluated with numpy's chebval and explicit trigonometry, independent of BaseShape
    g = Grid(n_theta, n_l, l_min, l_max)
    u = (2 * g.l_centers - (l_min + l_max)) / (l_max - l_min)
    rows = np.stack([C.chebval(u, coeffs[:, k]) for k in range(coeffs.shape[1])], axis=1)
    th = g.theta_centers
    cols = [np.ones_like(th)]
    for h in range(1, coeffs.shape[1]):
        cols.append(np.cos((h + 1) // 2 * th) if h % 2 else np.sin((h + 1) // 2 * th))
    return Heightmap(rows @ np.stack(cols), l_min, l_max)


def test_base_shape_round_trip():
    rng = np.random.default_rng(3)
    coeffs = rng.normal(0, 1.0, (10, 10))
    coeffs[0, 0] = 150.0
    bs = fit_base_shape(synth_from_coeffs(coeffs), 10, 10)
    assert np.abs(bs.coeffs - coeffs).max() < 1e-6


def test_fit_base_shape_idempotent():
    rng = np.random.default_rng(4)
    h = heightmap_of(lambda T, L: 120 + rng.normal(0, 2.0, T.shape), n_l=60)
    bs = fit_base_shape(h)
    again = fit_base_shape(h.with_values(base_grid(bs, Grid.of(h))))
    assert np.abs(again.coeffs - bs.coeffs).max() < 1e-12 * 150


def test_base_shape_single_harmonic_exact():
    coeffs = np.zeros((3, 4))
    coeffs[0, 0], coeffs[0, 1] = 100.0, 5.0
    bs = BaseShape(coeffs, 0.0, 1000.0)
    th = np.linspace(0, TWO_PI, 50)
    np.testing.assert_allclose(eval_base_shape(bs, th, np.full(50, 300.0)), 100 + 5 * np.cos(th), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, TWO_PI, exclude_max=True), st.floats(0, 1000))
def test_base_shape_periodicity(theta, l):
    coeffs = np.random.default_rng(5).normal(size=(4, 7))
    bs = BaseShape(coeffs, 0.0, 1000.0)
    assert eval_base_shape(bs, 0.0, l) == eval_base_shape(bs, TWO_PI, l)
    if (theta + TWO_PI) - TWO_PI == theta:
        assert eval_base_shape(bs, theta, l) == eval_base_shape(bs, theta + TWO_PI, l)


def test_discarded_harmonic_energy():
    # harmonics 1..5 (cos) are kept with n_fourier = 10; cos(7 theta) is not
    h = heightmap_of(lambda T, L: 100 + 5 * np.cos(T) + 2 * np.cos(7 * T) + 1e-3 * L, n_l=40)
    bs = fit_base_shape(h, 10, 4)
    err = h.values - base_grid(bs, Grid.of(h))
    assert np.sqrt(np.mean(err ** 2)) == pytest.approx(2.0 / math.sqrt(2.0), rel=1e-9)


def test_base_shape_preconditions():
    h = heightmap_of(lambda T, L: np.full(T.shape, 100.0), n_theta=16)
    with pytest.raises(SurfaceModelError):
        fit_base_shape(h, n_fourier=10)
    mask = np.zeros(h.values.shape, dtype=bool)
    mask[:10] = True
    with pytest.raises(SurfaceModelError):
        fit_base_shape(Heightmap(h.values, h.l_min, h.l_max, mask), 4, 4)


def test_fourier_basis_order():
    th = np.array([0.3])
    np.testing.assert_allclose(fourier_basis(th, 5)[0], [1, np.cos(0.3), np.sin(0.3), np.cos(0.6), np.sin(0.6)])


# --- surface knots -----------------------------------------------------------

def test_dog_centre_and_zero_crossing():
    k = SurfaceKnot(0.0, 0.0, 10.0, 1.5, 0.4, 0.6, 3.0, 1.0)
    assert surface_knot_imprint(k, 0.0, 0.0) == pytest.approx(2.0, abs=1e-15)
    assert abs(surface_knot_imprint(k, 10.0, 0.0)) < 1e-12
    assert abs(surface_knot_imprint(k, 0.0, 15.0)) < 1e-12


def test_dog_hand_value():
    s1 = dog_sigma1(10.0, 0.5, 2.0)
    assert s1 ** 2 == pytest.approx(300.0 / (2 * math.log(2.0)), rel=1e-14)
    assert s1 ** 2 == pytest.approx(216.40, abs=5e-3)
    # narrow Gaussian (sigma2 = alpha sigma1) carries m: 2 exp(-25 / 108.20) - exp(-25 / 432.81) = 0.64353
    expected = 2 * math.exp(-25 / (2 * (0.5 * s1) ** 2)) - math.exp(-25 / (2 * s1 ** 2))
    assert dog_1d(5.0, 10.0, 0.5, 2.0) == pytest.approx(expected, rel=1e-14)
    assert dog_1d(5.0, 10.0, 0.5, 2.0) == pytest.approx(0.64353, abs=5e-6)


def test_dog_requires_m_above_one():
    with pytest.raises(SurfaceModelError):
        dog_sigma1(10.0, 0.5, 1.0)
    with pytest.raises(SurfaceModelError):
        SurfaceKnot(0.0, 0.0, 10.0, m=0.9).validate()


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1.001, 20.0), st.floats(0.5, 50.0))
def test_dog_sign_structure(alpha, m, r):
    assert abs(dog_1d(r, r, alpha, m)) < 1e-12
    x_in = np.linspace(0, r, 50, endpoint=False)
    assert np.all(dog_1d(x_in, r, alpha, m) > 0)
    x_out = r * np.linspace(1.01, 1.5, 20)
    assert np.all(dog_1d(x_out, r, alpha, m) < 0)


def patch_setup():
    h = Heightmap(np.zeros((80, 256)), 300.0, 700.0)
    return knot_window(h, 0.0, 500.0, 48, 58, 150.0)


def test_surface_knot_fit_round_trip():
    _, _, da, dl = patch_setup()
    k = SurfaceKnot(0.0, 500.0, 12.0, 1.2, 0.45, 0.55, 2.5, 1.5)
    fit = fit_surface_knot_patch(footprint_imprint(k, da, dl), da, dl, 0.0, 500.0, 12.0, 1.2)
    got = [fit.knot.alpha_theta, fit.knot.alpha_l, fit.knot.m, fit.knot.amplitude]
    np.testing.assert_allclose(got, [0.45, 0.55, 2.5, 1.5], rtol=1e-3)
    assert fit.converged and not fit.low_confidence


def test_surface_knot_zero_patch_is_degenerate():
    _, _, da, dl = patch_setup()
    fit = fit_surface_knot_patch(np.zeros(da.shape), da, dl, 0.0, 500.0, 12.0, 1.2)
    assert fit.degenerate and fit.knot.amplitude == 0.0


def test_surface_knot_noise_floor():
    _, _, da, dl = patch_setup()
    clean = footprint_imprint(SurfaceKnot(0.0, 500.0, 12.0, 1.2, 0.45, 0.55, 2.5, 1.5), da, dl)
    rng = np.random.default_rng(11)
    rmses = [fit_surface_knot_patch(clean + rng.normal(0, 0.5, clean.shape), da, dl, 0.0, 500.0, 12.0, 1.2).rmse
             for _ in range(100)]
    assert 0.4 <= min(rmses) and max(rmses) <= 0.65


def test_pinned_flag():
    assert surface_knot_pinned(SurfaceKnot(0, 0, 10, alpha_theta=SK_ALPHA_RANGE[0] + 1e-4))
    assert surface_knot_pinned(SurfaceKnot(0, 0, 10, m=SK_M_RANGE[1]))
    assert not surface_knot_pinned(SurfaceKnot(0, 0, 10))


# --- grain -------------------------------------------------------------------

GRID = Grid(256, 400, 0.0, 1000.0)


def test_zero_amplitude_grain():
    assert not np.any(gabor_grain(GRID, GrainConfig(amplitude=0.0), 100.0))


def test_grain_is_deterministic():
    a = gabor_grain(GRID, GrainConfig(seed=9), 100.0)
    b = gabor_grain(GRID, GrainConfig(seed=9), 100.0)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != gabor_grain(GRID, GrainConfig(seed=10), 100.0).tobytes()


def test_grain_runs_along_the_log():
    dx = TWO_PI * 100.0 / GRID.n_theta
    dy = (GRID.l_max - GRID.l_min) / GRID.n_l
    ratios = []
    for seed in range(10):
        f = gabor_grain(GRID, GrainConfig(seed=seed), 100.0)
        along_l = np.abs(np.diff(f, axis=0)).mean() / dy
        across = np.abs(np.diff(f, axis=1, append=f[:, :1])).mean() / dx
        ratios.append(along_l / across)
    assert max(ratios) < 0.5


def test_grain_mean_and_spread():
    cfg = GrainConfig(seed=3)
    f = gabor_grain(Grid(1000, 1000, 0.0, 2500.0), cfg, 400.0)
    assert abs(f.mean()) < 0.05 * cfg.amplitude
    assert f.std() == pytest.approx(cfg.rms, rel=0.1)


def test_grain_is_seam_free():
    f = gabor_grain(GRID, GrainConfig(seed=2), 100.0)
    interior = np.abs(np.diff(f, axis=1)).mean()
    seam = np.abs(f[:, 0] - f[:, -1]).mean()
    assert seam < 1.5 * interior


def test_grain_config_validation():
    with pytest.raises(SurfaceModelError):
        GrainConfig(octaves=0)
    with pytest.raises(SurfaceModelError):
        GrainConfig(persistence=1.5)
    with pytest.raises(SurfaceModelError):
        GrainConfig(amplitude=-1.0)


# --- composition -------------------------------------------------------------

def constant_base(value=100.0, l_max=1000.0):
    coeffs = np.zeros((3, 5))
    coeffs[0, 0] = value
    return BaseShape(coeffs, 0.0, l_max)


def test_compose_constant():
    g = Grid(64, 100, 0.0, 1000.0)
    h = compose_heightmap(g, constant_base())
    np.testing.assert_allclose(h.values, 100.0, atol=1e-12)


def test_compose_knot_locality():
    g = Grid(256, 200, 0.0, 1000.0)
    k = SurfaceKnot(1.0, 500.0, 10.0, 1.2, 0.5, 0.5, 2.0, 2.0)
    h0 = compose_heightmap(g, constant_base())
    h1 = compose_heightmap(g, constant_base(), [k])
    changed = np.abs(h1.values - h0.values) > 1e-9
    (s1t, _), (s1l, _) = k.sigmas()
    T, L = np.meshgrid(g.theta_centers, g.l_centers)
    d_arc = (np.mod(T - 1.0 + np.pi, TWO_PI) - np.pi) * 100.0
    q = np.sqrt((d_arc / s1t) ** 2 + ((L - 500.0) / s1l) ** 2)
    assert changed.any()
    assert np.all(q[changed] <= 3.0)


def test_compose_recovers_heightmap_up_to_discarded_band():
    rng = np.random.default_rng(8)
    coeffs = rng.normal(0, 0.5, (6, 10))
    coeffs[0, 0] = 140.0
    smooth = synth_from_coeffs(coeffs, 128, 100, 0.0, 1000.0)
    extra = 0.7 * np.cos(9 * smooth.theta_centers)[None, :] * np.ones((100, 1))
    h = smooth.with_values(smooth.values + extra)
    bs = fit_base_shape(h, 10, 6)
    rec = compose_heightmap(Grid.of(h), bs)
    assert np.sqrt(np.mean((rec.values - h.values) ** 2)) <= np.sqrt(np.mean(extra ** 2)) * (1 + 1e-9)


def test_compose_rejects_nonphysical():
    with pytest.raises(SurfaceModelError):
        compose_heightmap(Grid(64, 100, 0.0, 1000.0), constant_base(-5.0))
