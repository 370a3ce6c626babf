import numpy as np
import pytest
from numpy.polynomial import chebyshev as C

from conftest import cylinder_points
from synthlogs.centerline import Centerline, DomainError, evaluate_centerline, fit_centerline


def test_zero_coefficients_give_zero_curve():
    c = Centerline.straight(0.0, 1000.0, n=5)
    y, z = evaluate_centerline(c, np.linspace(0, 1000, 11))
    assert np.all(y == 0.0) and np.all(z == 0.0)


def test_first_degree_term_is_a_ramp():
    c = Centerline([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 200.0, 1200.0)
    y, _ = evaluate_centerline(c, np.array([200.0, 700.0, 1200.0]))
    np.testing.assert_allclose(y, [-1.0, 0.0, 1.0], atol=1e-15)


def test_parameter_count_is_twice_the_terms():
    assert Centerline.straight(0, 10, n=7).n_parameters == 14


def test_evaluation_outside_margin_is_rejected():
    c = Centerline.straight(0.0, 1000.0)
    evaluate_centerline(c, np.array([-49.0, 1049.0]))
    with pytest.raises(DomainError):
        evaluate_centerline(c, np.array([-60.0]))


def test_cubic_round_trip():
    # y(x) = 1e-7 (x - 500)^3 - 2e-4 (x - 500)^2, z(x) = 0.01 x; expanded independently
    x = np.linspace(0.0, 1000.0, 100)
    y_true = 1e-7 * (x - 500) ** 3 - 2e-4 * (x - 500) ** 2
    z_true = 0.01 * x
    u = (2 * x - 1000.0) / 1000.0
    cy = C.chebfit(u, y_true, 3)
    cz = C.chebfit(u, z_true, 3)
    c = Centerline(cy[1:], cz[1:], 0.0, 1000.0, cy[0], cz[0])
    y, z = c.shape(x)
    np.testing.assert_allclose(y + c.offset_y, y_true, atol=1e-6)
    np.testing.assert_allclose(z + c.offset_z, z_true, atol=1e-6)


def test_fit_axis_aligned_cylinder():
    c = fit_centerline(cylinder_points(), n=5)
    assert np.max(np.abs(c.coeffs_y)) < 1e-9 and np.max(np.abs(c.coeffs_z)) < 1e-9
    assert abs(c.offset_y) < 1e-9 and abs(c.offset_z) < 1e-9


def test_fit_offset_cylinder_stores_offset():
    c = fit_centerline(cylinder_points(y0=7.0, z0=-3.0), n=5)
    assert np.max(np.abs(c.coeffs_y)) < 1e-9 and np.max(np.abs(c.coeffs_z)) < 1e-9
    assert c.offset_y == pytest.approx(7.0, abs=1e-9)
    assert c.offset_z == pytest.approx(-3.0, abs=1e-9)


def test_fit_bent_cylinder(rng):
    bend = lambda x: 2e-5 * (x - 1000.0) ** 2
    pts = cylinder_points(120.0, 0.0, 2000.0, n_theta=120, n_x=400, bend=bend)
    pts += rng.normal(0, 0.5, pts.shape)
    c = fit_centerline(pts, n=5)
    x = np.linspace(0.0, 2000.0, 200)
    y, z = c.shape(x)
    rms = np.sqrt(np.mean((y + c.offset_y - bend(x)) ** 2 + (z + c.offset_z) ** 2))
    assert rms < 0.5


def test_fit_partial_end_rings():
    # an oblique end cut leaves partial rings; circle centres stay on the axis
    pts = cylinder_points(100.0, 0.0, 1000.0, n_theta=180, n_x=400)
    cut = pts[:, 0] > 30.0 * (1.0 + pts[:, 2] / 100.0)
    c = fit_centerline(pts[cut], n=5)
    x = np.linspace(c.x_min, c.x_max, 50)
    y, z = c.shape(x)
    assert np.max(np.abs(y + c.offset_y)) < 1e-6 and np.max(np.abs(z + c.offset_z)) < 1e-6


def test_fit_invariant_under_subsampling(rng):
    pts = cylinder_points(100.0, 0.0, 1000.0, n_theta=360, n_x=500, y0=4.0, z0=1.0)
    half = pts[rng.random(len(pts)) < 0.5]
    a = fit_centerline(pts, n=5, x_range=(0.0, 1000.0))
    b = fit_centerline(half, n=5, x_range=(0.0, 1000.0))
    np.testing.assert_allclose(np.r_[a.coeffs_y, a.coeffs_z, a.offset_y, a.offset_z],
                               np.r_[b.coeffs_y, b.coeffs_z, b.offset_y, b.offset_z], atol=1e-9)


POLY_AXIS = Centerline([4.0, -2.0, 0.5, 0.0, 0.0], [1.0, 1.5, 0.0, 0.0, 0.0], 0.0, 1500.0, 3.0, -2.0)


def axis_error(c, true, x):
    fitted = np.stack(c.shape(x)) + [[c.offset_y], [c.offset_z]]
    exact = np.stack(true.shape(x)) + [[true.offset_y], [true.offset_z]]
    return np.abs(fitted - exact).max()


def test_fit_polynomial_centerline_exact():
    # one planar ring per slice, centred on an axis of degree 3 < n
    true = POLY_AXIS
    th = np.linspace(0, 2 * np.pi, 90, endpoint=False)
    xs = np.arange(5.0, 1500.0, 10.0)
    y, z = true.shape(xs)
    X, T = np.meshgrid(xs, th, indexing="ij")
    Y = (y + true.offset_y)[:, None] + 80 * np.sin(T)
    Z = (z + true.offset_z)[:, None] + 80 * np.cos(T)
    c = fit_centerline(np.stack([X.ravel(), Y.ravel(), Z.ravel()], 1), n=5, x_range=(0.0, 1500.0))
    assert axis_error(c, true, np.linspace(0.0, 1500.0, 100)) < 1e-6


def test_fit_tube_around_polynomial_axis():
    # an x-slice through a tilted tube is an ellipse, so the circle centre is only nearly on the axis
    from synthlogs.logcentric import from_log_centric
    th = np.linspace(0, 2 * np.pi, 90, endpoint=False)
    T, L = np.meshgrid(th, np.linspace(20.0, 1480.0, 600))
    pts = from_log_centric(np.column_stack([T.ravel(), L.ravel(), np.full(T.size, 80.0)]), POLY_AXIS)
    c = fit_centerline(pts, n=5, x_range=(0.0, 1500.0))
    assert axis_error(c, POLY_AXIS, np.linspace(100.0, 1400.0, 100)) < 1e-3


def test_too_few_slices():
    pts = cylinder_points(100.0, 0.0, 20.0, n_x=5)
    with pytest.raises(ValueError):
        fit_centerline(pts, n=5)
