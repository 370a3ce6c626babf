import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.polynomial import chebyshev as C

from conftest import cylinder_points
from synthlogs.centerline import Centerline, DomainError
from synthlogs.logcentric import (TWO_PI, Heightmap, build_heightmap, circular_mean, from_log_centric,
                                  heightmap_sample, to_knot_frame, to_log_centric, unwrap_angles)


def curved_centerline():
    return Centerline([0.0, 15.0, 0.0], [0.0, 0.0, 0.0], 0.0, 1000.0, offset_y=2.0, offset_z=-1.0)


def polyline_oracle(c, pts, segments=100_000):
    """Nearest point on a dense polyline of the centerline: (l, rho) per point."""
    pad = c.margin * c.length
    x = np.linspace(c.x_min - pad, c.x_max + pad, segments + 1)
    P = c.position(x)
    seg = np.diff(P, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    cum -= np.interp(c.x_min, x, cum)
    out = []
    for p in pts:
        t = np.clip(np.sum((p - P[:-1]) * seg, axis=1) / seg_len ** 2, 0.0, 1.0)
        q = P[:-1] + t[:, None] * seg
        d = np.linalg.norm(p - q, axis=1)
        i = int(np.argmin(d))
        out.append((c.x_min + cum[i] + t[i] * seg_len[i], d[i]))
    return np.array(out)


def test_straight_projection_and_inverse():
    c = Centerline.straight(0.0, 100.0)
    q = to_log_centric(np.array([10.0, 0.0, 5.0]), c)
    np.testing.assert_allclose(q, [0.0, 10.0, 5.0], atol=1e-12)
    p = from_log_centric(np.array([0.0, 10.0, 5.0]), c)
    np.testing.assert_allclose(p, [10.0, 0.0, 5.0], atol=1e-12)


def test_point_on_centerline_has_zero_angle_and_radius():
    c = curved_centerline()
    on = c.position(np.array([300.0]))
    q = to_log_centric(on, c)
    assert q[0, 0] == 0.0
    assert q[0, 2] < 1e-9
    # rho = 0 maps back onto the curve at arc position l
    back = from_log_centric(np.array([[1.3, q[0, 1], 0.0]]), c)
    np.testing.assert_allclose(back, on, atol=1e-9)


def test_curved_projection_matches_dense_polyline(rng):
    c = curved_centerline()
    x = rng.uniform(50, 950, 40)
    pts = c.position(x) + np.column_stack([np.zeros(40), rng.normal(0, 60, 40), rng.normal(0, 60, 40)])
    q = to_log_centric(pts, c)
    oracle = polyline_oracle(c, pts)
    assert np.max(np.abs(q[:, 1] - oracle[:, 0])) < 0.01
    assert np.max(np.abs(q[:, 2] - oracle[:, 1])) < 0.01


def test_round_trip_random_points(rng):
    c = Centerline([3.0, -8.0, 1.5, 0.5], [-4.0, 2.0, 0.7, -0.3], 100.0, 2100.0, 12.0, -7.0)
    q = np.column_stack([rng.uniform(0, TWO_PI, 1000), rng.uniform(150, 2050, 1000), rng.uniform(1, 200, 1000)])
    p = from_log_centric(q, c)
    back = from_log_centric(to_log_centric(p, c), c)
    assert np.max(np.linalg.norm(back - p, axis=1)) < 1e-6


def test_rotation_about_straight_axis_shifts_theta():
    c = Centerline.straight(0.0, 500.0)
    q = np.array([[0.3, 100.0, 50.0], [2.0, 250.0, 80.0], [5.9, 400.0, 20.0]])
    delta = 1.1
    rotated = q.copy()
    rotated[:, 0] = np.mod(q[:, 0] + delta, TWO_PI)
    a = to_log_centric(from_log_centric(q, c), c)
    b = to_log_centric(from_log_centric(rotated, c), c)
    np.testing.assert_allclose(np.mod(b[:, 0] - a[:, 0], TWO_PI), delta, atol=1e-12)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-12)


def test_domain_errors():
    c = Centerline.straight(0.0, 100.0)
    with pytest.raises(DomainError):
        to_log_centric(np.array([[200.0, 0.0, 5.0]]), c)
    with pytest.raises(DomainError):
        from_log_centric(np.array([[0.0, 300.0, 5.0]]), c)


def test_knot_frame_arc_coordinate():
    pts = np.array([[1.0, 5.0, 100.0], [1.1, 6.0, 100.0], [0.9, 7.0, 100.0]])
    kf, mean = to_knot_frame(pts)
    assert mean == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(kf[:, 0], [0.0, 10.0, -10.0], atol=1e-9)
    # s - (theta - theta_mean) * rho vanishes up to rounding
    np.testing.assert_allclose(kf[:, 0] - (pts[:, 0] - mean) * pts[:, 2], 0.0, atol=1e-12)


def test_knot_frame_seam_invariance(rng):
    theta = np.mod(rng.normal(0.0, 0.2, 50), TWO_PI)  # straddles 0 / 2pi
    pts = np.column_stack([theta, rng.uniform(0, 10, 50), rng.uniform(20, 120, 50)])
    rotated = pts.copy()
    rotated[:, 0] = np.mod(theta + np.pi, TWO_PI)
    a, ma = to_knot_frame(pts)
    b, mb = to_knot_frame(rotated)
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert np.mod(mb - ma, TWO_PI) == pytest.approx(np.pi, abs=1e-12)


def test_knot_frame_rejects_empty():
    with pytest.raises(ValueError):
        to_knot_frame(np.zeros((0, 3)))


def test_unwrap_and_circular_mean():
    th = np.array([6.2, 0.05, 0.1])
    u = unwrap_angles(th)
    assert np.ptp(u) < 0.3
    assert circular_mean([TWO_PI - 0.1, 0.1]) == pytest.approx(0.0, abs=1e-12) or \
        circular_mean([TWO_PI - 0.1, 0.1]) == pytest.approx(TWO_PI, abs=1e-12)


def cylinder_heightmap(n_theta=32, n_l=20, drop_cell=None):
    c = Centerline.straight(0.0, 200.0)
    pts = cylinder_points(100.0, 0.0, 200.0, n_theta=4 * n_theta, n_x=8 * n_l)
    q = to_log_centric(pts, c)
    if drop_cell is not None:
        shell = Heightmap(np.ones((n_l, n_theta)), 0.0, 200.0)
        from synthlogs.logcentric import grid_index
        i, j = grid_index(shell, q[:, 0], q[:, 1])
        q = q[~((i == drop_cell[0]) & (j == drop_cell[1]))]
    return build_heightmap(q, n_theta, n_l, (0.0, 200.0))


def test_cylinder_heightmap_is_constant():
    h = cylinder_heightmap()
    np.testing.assert_allclose(h.values, 100.0, atol=1e-9)
    assert h.mask.all()


def test_single_hole_is_filled_and_flagged():
    h = cylinder_heightmap(drop_cell=(7, 5))
    assert not h.mask[7, 5]
    assert h.mask.sum() == h.mask.size - 1
    assert h.values[7, 5] == pytest.approx(100.0, abs=1e-6)


def test_analytic_surface_binning_error():
    n_theta, n_l = 64, 16
    th = np.linspace(0, TWO_PI, 4096, endpoint=False)
    l = np.linspace(0.0, 160.0, 81)
    T, L = np.meshgrid(th, l)
    pts = np.column_stack([T.ravel(), L.ravel(), 100.0 + 5.0 * np.cos(T.ravel())])
    h = build_heightmap(pts, n_theta, n_l, (0.0, 160.0))
    exact = 100.0 + 5.0 * np.cos(h.theta_centers)
    # cells span +/- half a column; the local gradient is 5 |sin theta|
    bound = 0.5 * (5.0 * np.abs(np.sin(h.theta_centers)) + 1e-9) * h.dtheta + 0.5 * 5.0 * (h.dtheta / 2) ** 2
    assert np.all(np.abs(h.values - exact[None, :]) <= bound[None, :] + 1e-9)


def test_build_heightmap_errors():
    with pytest.raises(ValueError):
        build_heightmap(np.zeros((0, 3)), 16, 16)
    with pytest.raises(ValueError):
        build_heightmap(np.ones((5, 3)), 4, 16)


def test_heightmap_sampling_rules(rng):
    h = Heightmap(rng.uniform(90, 110, (10, 16)), 0.0, 100.0)
    th, l = h.theta_centers[3], h.l_centers[4]
    assert heightmap_sample(h, th, l) == pytest.approx(h.values[4, 3], abs=1e-12)
    mid_theta = 0.5 * (h.theta_centers[3] + h.theta_centers[4])
    assert heightmap_sample(h, mid_theta, l) == pytest.approx(0.5 * (h.values[4, 3] + h.values[4, 4]), abs=1e-12)
    mid_l = 0.5 * (h.l_centers[4] + h.l_centers[5])
    assert heightmap_sample(h, th, mid_l) == pytest.approx(0.5 * (h.values[4, 3] + h.values[5, 3]), abs=1e-12)
    # last column wraps onto the first
    wrap = 0.5 * (h.theta_centers[-1] + TWO_PI)
    assert heightmap_sample(h, wrap, l) == pytest.approx(0.5 * (h.values[4, -1] + h.values[4, 0]), abs=1e-12)
    with pytest.raises(DomainError):
        heightmap_sample(h, 0.0, 150.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, TWO_PI, exclude_max=True), st.floats(0, 100))
def test_heightmap_theta_periodicity(theta, l):
    # only angles whose shift by 2pi is exact in floating point carry the same information
    assume((theta + TWO_PI) - TWO_PI == theta)
    h = Heightmap(np.arange(160.0).reshape(10, 16) + 50.0, 0.0, 100.0)
    assert heightmap_sample(h, theta, l) == heightmap_sample(h, theta + TWO_PI, l)
    assert heightmap_sample(h, 0.0, l) == heightmap_sample(h, TWO_PI, l)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.lists(st.floats(-20, 20), min_size=3, max_size=3),
       st.integers(0, 2 ** 31))
def test_round_trip_property(cy, cz, seed):
    c = Centerline(cy, cz, 0.0, 1500.0)
    r = np.random.default_rng(seed)
    q = np.column_stack([r.uniform(0, TWO_PI, 20), r.uniform(0, 1500, 20), r.uniform(1, 150, 20)])
    p = from_log_centric(q, c)
    q2 = to_log_centric(p, c)
    assert np.max(np.linalg.norm(from_log_centric(q2, c) - p, axis=1)) < 1e-6
