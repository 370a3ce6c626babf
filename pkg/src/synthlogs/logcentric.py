"""Log-centric coordinates and the cyclic heightmap.

Coordinate conventions used throughout the package:

* Cartesian points are ``(N, 3)`` arrays ``(x, y, z)`` in mm, x along the log.
* Log-centric points are ``(N, 3)`` arrays ``(theta, l, rho)``; ``theta`` in
  ``[0, 2pi)`` is measured in the centerline normal plane from a
  rotation-minimizing reference frame seeded with +z at ``x_min`` and turning
  towards +y; ``l`` is arc length along the centerline, offset so that
  ``l == x`` for a straight centerline; ``rho`` is the distance to the curve.
* Knot-frame points are ``(s, l, rho)`` with ``s = (theta - theta_mean) * rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as C

from . import kernels
from .centerline import Centerline, DomainError

TWO_PI = 2.0 * np.pi

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class _CurveTable:
    """Dense tabulation of a centerline: arc length and reference frames at nodes."""

    def __init__(self, c: Centerline, nodes_per_length: int = 1024):
        self.c = c
        pad = c.margin * c.length
        h = c.length / nodes_per_length
        k_pad = int(np.ceil(pad / h)) + 1
        k = np.arange(-k_pad, nodes_per_length + k_pad + 1)
        self.h = h
        self.i0 = k_pad
        self.x = c.x_min + h * k
        self.x_lo = c.x_min - pad
        self.x_hi = c.x_max + pad
        self.dcy = C.chebder(np.concatenate([[0.0], c.coeffs_y]))
        self.dcz = C.chebder(np.concatenate([[0.0], c.coeffs_z]))
        self.d2cy = C.chebder(self.dcy)
        self.d2cz = C.chebder(self.dcz)
        self.scale = 2.0 / c.length
        seg = self._segment_integral(self.x[:-1], self.x[1:])
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.cum = cum - cum[self.i0]
        self.t_nodes = self.tangent(self.x)
        self.u_nodes = self._rmf()

    def derivs(self, x):
        u = self.c._u(x)
        s = self.scale
        dy = C.chebval(u, self.dcy) * s
        dz = C.chebval(u, self.dcz) * s
        return dy, dz

    def second(self, x):
        u = self.c._u(x)
        s2 = self.scale ** 2
        return C.chebval(u, self.d2cy) * s2, C.chebval(u, self.d2cz) * s2

    def speed(self, x):
        dy, dz = self.derivs(x)
        return np.sqrt(1.0 + dy * dy + dz * dz)

    def tangent(self, x):
        dy, dz = self.derivs(x)
        t = np.stack([np.ones_like(dy), dy, dz], axis=-1)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def _segment_integral(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        t = mid[..., None] + half[..., None] * _GL_X
        return half * (self.speed(t) @ _GL_W)

    def _rmf(self):
        # double-reflection rotation-minimizing frame, seeded with +z at x_min
        pos = self.c.position(self.x)
        t = self.t_nodes
        u = np.zeros_like(pos)
        i0 = self.i0
        seed = np.array([0.0, 0.0, 1.0])
        seed = seed - (seed @ t[i0]) * t[i0]
        u[i0] = seed / np.linalg.norm(seed)
        for i in range(i0, len(pos) - 1):
            u[i + 1] = _reflect_step(pos[i], pos[i + 1], t[i], t[i + 1], u[i])
        for i in range(i0, 0, -1):
            u[i - 1] = _reflect_step(pos[i], pos[i - 1], t[i], t[i - 1], u[i])
        u -= np.sum(u * t, axis=1, keepdims=True) * t
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    def node_index(self, x):
        i = np.floor((np.asarray(x) - self.x[0]) / self.h).astype(np.int64)
        return np.clip(i, 0, len(self.x) - 2)

    def arc(self, x):
        """Signed arc length from x_min to x."""
        x = np.asarray(x, dtype=np.float64)
        i = self.node_index(x)
        return self.cum[i] + self._segment_integral(self.x[i], x)

    def x_from_arc(self, s):
        s = np.asarray(s, dtype=np.float64)
        x = np.interp(s, self.cum, self.x)
        for _ in range(50):
            dx = (self.arc(x) - s) / self.speed(x)
            x = x - dx
            if np.all(np.abs(dx) < 1e-13 * max(1.0, self.c.length)):
                break
        return x

    def frame(self, x):
        """(tangent, u, v) at x; u, v span the normal plane, v = u x t."""
        x = np.asarray(x, dtype=np.float64)
        i = self.node_index(x)
        a = self.t_nodes[i]
        b = self.tangent(x)
        w = self.u_nodes[i]
        # rotation taking a to b applied to w (w orthogonal to a)
        coef = np.sum(b * w, axis=-1) / (1.0 + np.sum(a * b, axis=-1))
        u = w - coef[..., None] * (a + b)
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        v = np.cross(u, b)
        return b, u, v


def _reflect_step(p0, p1, t0, t1, r0):
    v1 = p1 - p0
    c1 = v1 @ v1
    if c1 == 0.0:
        return r0
    rl = r0 - (2.0 / c1) * (v1 @ r0) * v1
    tl = t0 - (2.0 / c1) * (v1 @ t0) * v1
    v2 = t1 - tl
    c2 = v2 @ v2
    if c2 < 1e-30:
        return rl
    return rl - (2.0 / c2) * (v2 @ rl) * v2


def curve_table(c: Centerline) -> _CurveTable:
    tab = c.__dict__.get("_table")
    if tab is None:
        tab = _CurveTable(c)
        object.__setattr__(c, "_table", tab)
    return tab


def to_log_centric(points, c: Centerline) -> np.ndarray:
    """Convert Cartesian ``(N, 3)`` points to ``(theta, l, rho)``.

    The foot point on the centerline is found by Newton iteration on
    ``(C(x) - p) . C'(x) = 0`` starting from ``x = p.x``. Points lying on the
    centerline get ``rho = 0`` and ``theta = 0``.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    tab = curve_table(c)
    c.check_domain(pts[:, 0])
    x = pts[:, 0].copy()
    for _ in range(60):
        y, z = c.shape(x)
        dy, dz = tab.derivs(x)
        ddy, ddz = tab.second(x)
        ex = x - pts[:, 0]
        ey = y + c.offset_y - pts[:, 1]
        ez = z + c.offset_z - pts[:, 2]
        f = ex + ey * dy + ez * dz
        fp = 1.0 + dy * dy + dz * dz + ey * ddy + ez * ddz
        fp = np.where(fp > 0.1, fp, 1.0 + dy * dy + dz * dz)
        step = np.clip(f / fp, -0.25 * c.length, 0.25 * c.length)
        x = np.clip(x - step, tab.x_lo, tab.x_hi)
        if np.all(np.abs(step) < 1e-12 * max(1.0, c.length)):
            break
    if np.any(x <= tab.x_lo) or np.any(x >= tab.x_hi):
        raise DomainError("point projects outside the centerline domain")
    foot = c.position(x)
    d = pts - foot
    t, u, v = tab.frame(x)
    # remove any residual tangential component from the finite Newton tolerance
    d = d - np.sum(d * t, axis=1, keepdims=True) * t
    rho = np.linalg.norm(d, axis=1)
    theta = np.mod(np.arctan2(np.sum(d * v, axis=1), np.sum(d * u, axis=1)), TWO_PI)
    theta = np.where(rho > 0.0, theta, 0.0)
    theta = np.where(theta >= TWO_PI, 0.0, theta)
    l = c.x_min + tab.arc(x)
    out = np.stack([theta, l, rho], axis=1)
    return out[0] if single else out


def from_log_centric(q, c: Centerline) -> np.ndarray:
    """Inverse of :func:`to_log_centric`."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = q.reshape(-1, 3)
    tab = curve_table(c)
    arc = q[:, 1] - c.x_min
    lo = tab.arc(tab.x_lo)
    hi = tab.arc(tab.x_hi)
    if np.any(arc < lo) or np.any(arc > hi) or not np.all(np.isfinite(arc)):
        raise DomainError("l outside the centerline domain")
    x = tab.x_from_arc(arc)
    foot = c.position(x)
    _, u, v = tab.frame(x)
    th = q[:, 0][:, None]
    out = foot + q[:, 2][:, None] * (np.cos(th) * u + np.sin(th) * v)
    return out[0] if single else out


def unwrap_angles(theta) -> np.ndarray:
    """Shift angles by multiples of 2pi so the largest angular gap is the cut."""
    th = np.mod(np.asarray(theta, dtype=np.float64), TWO_PI)
    if th.size < 2:
        return th
    srt = np.sort(th)
    gaps = np.diff(np.concatenate([srt, [srt[0] + TWO_PI]]))
    k = int(np.argmax(gaps))
    cut = srt[(k + 1) % srt.size]
    return cut + np.mod(th - cut, TWO_PI)


def circular_mean(theta) -> float:
    th = np.asarray(theta, dtype=np.float64)
    return float(np.mod(np.arctan2(np.sin(th).mean(), np.cos(th).mean()), TWO_PI))


def to_knot_frame(points):
    """Map ``(theta, l, rho)`` knot points to ``(s, l, rho)`` around their mean angle.

    Returns:
        (knot_points, theta_mean) with ``theta_mean`` in ``[0, 2pi)``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("to_knot_frame needs at least one point")
    th = unwrap_angles(pts[:, 0])
    mean = circular_mean(pts[:, 0])
    mean_u = mean + TWO_PI * np.round((th.mean() - mean) / TWO_PI)
    s = (th - mean_u) * pts[:, 2]
    return np.stack([s, pts[:, 1], pts[:, 2]], axis=1), mean


def from_knot_frame(points, theta_mean):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rho = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.where(rho > 0, pts[:, 0] / rho, 0.0) + theta_mean
    return np.stack([np.mod(th, TWO_PI), pts[:, 1], rho], axis=1)


@dataclass(frozen=True)
class Heightmap:
    """Surface radius on a (l, theta) grid; rows are l, columns are theta.

    Column ``j`` is centered on ``theta = j * 2pi / n_theta``; row ``i`` on
    ``l = l_min + (i + 0.5) * dl``. ``mask`` is True for observed cells and
    False for cells filled by interpolation.
    """

    values: np.ndarray
    l_min: float
    l_max: float
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("heightmap values must be 2-D (n_l, n_theta)")
        if not self.l_max > self.l_min:
            raise ValueError("l_max must exceed l_min")
        m = np.ones(v.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if m.shape != v.shape:
            raise ValueError("mask shape differs from values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def n_l(self) -> int:
        return self.values.shape[0]

    @property
    def n_theta(self) -> int:
        return self.values.shape[1]

    @property
    def dl(self) -> float:
        return (self.l_max - self.l_min) / self.n_l

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.n_theta

    @property
    def theta_centers(self):
        return np.arange(self.n_theta) * self.dtheta

    @property
    def l_centers(self):
        return self.l_min + (np.arange(self.n_l) + 0.5) * self.dl

    def with_values(self, values, mask=None):
        return Heightmap(values, self.l_min, self.l_max, self.mask if mask is None else mask)

    def sample(self, theta, l):
        return heightmap_sample(self, theta, l)

    def is_physical(self) -> bool:
        return bool(np.all(np.isfinite(self.values)) and np.all(self.values > 0))


def grid_index(h: Heightmap, theta, l):
    """Nearest-cell (row, column) indices."""
    j = np.mod(np.round(np.mod(theta, TWO_PI) / h.dtheta).astype(np.int64), h.n_theta)
    i = np.clip(np.floor((np.asarray(l) - h.l_min) / h.dl).astype(np.int64), 0, h.n_l - 1)
    return i, j


def build_heightmap(points, n_theta: int, n_l: int, l_range=None, tol=1e-6) -> Heightmap:
    """Bin ``(theta, l, rho)`` points into a heightmap holding per-cell median rho.

    Empty cells are filled by cyclic neighbor averaging and flagged in the mask.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if n_theta < 8 or n_l < 8:
        raise ValueError("heightmap grid sizes must be >= 8")
    if len(pts) == 0:
        raise ValueError("no points to bin")
    if l_range is None:
        l_min, l_max = float(pts[:, 1].min()), float(pts[:, 1].max())
    else:
        l_min, l_max = map(float, l_range)
    shell = Heightmap(np.zeros((n_l, n_theta)), l_min, l_max)
    keep = (pts[:, 1] >= l_min) & (pts[:, 1] <= l_max)
    pts = pts[keep]
    i, j = grid_index(shell, pts[:, 0], pts[:, 1])
    cell = i * n_theta + j
    order = np.lexsort((pts[:, 2], cell))
    cell_s = cell[order]
    rho_s = pts[order, 2]
    uniq, start, count = np.unique(cell_s, return_index=True, return_counts=True)
    if uniq.size == 0:
        raise ValueError("all heightmap cells are empty")
    lo = start + (count - 1) // 2
    hi = start + count // 2
    med = 0.5 * (rho_s[lo] + rho_s[hi])
    values = np.full(n_l * n_theta, np.nan)
    values[uniq] = med
    valid = np.zeros(n_l * n_theta, dtype=bool)
    valid[uniq] = True
    values = values.reshape(n_l, n_theta)
    valid = valid.reshape(n_l, n_theta)
    if not valid.all():
        values[~valid] = values[valid].mean()
        values, _ = kernels.fill_holes(values, valid, tol)
    return Heightmap(values, l_min, l_max, valid)


def heightmap_sample(h: Heightmap, theta, l):
    """Bilinear sample, cyclic in theta, clamped to edge rows in l."""
    l = np.asarray(l, dtype=np.float64)
    eps = 1e-9 * max(1.0, abs(h.l_max), abs(h.l_min))
    if np.any(l < h.l_min - eps) or np.any(l > h.l_max + eps) or not np.all(np.isfinite(l)):
        raise DomainError(f"l outside heightmap range [{h.l_min}, {h.l_max}]")
    f = np.clip((l - h.l_min) / h.dl - 0.5, 0.0, h.n_l - 1)
    i0 = np.minimum(np.floor(f).astype(np.int64), max(h.n_l - 2, 0))
    t = f - i0
    i1 = np.minimum(i0 + 1, h.n_l - 1)
    g = np.mod(np.asarray(theta, dtype=np.float64), TWO_PI) / h.dtheta
    g0 = np.floor(g)
    s = g - g0
    j0 = np.mod(g0.astype(np.int64), h.n_theta)
    j1 = np.mod(j0 + 1, h.n_theta)
    v = h.values
    top = (1.0 - s) * v[i0, j0] + s * v[i0, j1]
    bot = (1.0 - s) * v[i1, j0] + s * v[i1, j1]
    return (1.0 - t) * top + t * bot
