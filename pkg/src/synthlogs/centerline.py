"""Log centerline as two Chebyshev series y(x), z(x).

The constant Chebyshev term is not part of the model: the centerline is kept
centered and the removed offset is stored separately (``offset_y``,
``offset_z``), so a centerline with ``n`` terms per axis has exactly ``2n``
shape coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as C

from .optim import linear_least_squares


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Centerline:
    coeffs_y: np.ndarray
    coeffs_z: np.ndarray
    x_min: float
    x_max: float
    offset_y: float = 0.0
    offset_z: float = 0.0
    margin: float = 0.05

    def __post_init__(self):
        cy = np.asarray(self.coeffs_y, dtype=np.float64).ravel()
        cz = np.asarray(self.coeffs_z, dtype=np.float64).ravel()
        if cy.size < 1 or cy.size != cz.size:
            raise ValueError("coeffs_y and coeffs_z must be non-empty and the same length")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        object.__setattr__(self, "coeffs_y", cy)
        object.__setattr__(self, "coeffs_z", cz)

    @property
    def n(self) -> int:
        return self.coeffs_y.size

    @property
    def n_parameters(self) -> int:
        return 2 * self.n

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @classmethod
    def straight(cls, x_min, x_max, n=5, offset_y=0.0, offset_z=0.0):
        return cls(np.zeros(n), np.zeros(n), float(x_min), float(x_max), float(offset_y), float(offset_z))

    def _u(self, x):
        return (2.0 * np.asarray(x, dtype=np.float64) - (self.x_min + self.x_max)) / (self.x_max - self.x_min)

    def check_domain(self, x):
        x = np.asarray(x, dtype=np.float64)
        pad = self.margin * self.length
        if np.any(x < self.x_min - pad) or np.any(x > self.x_max + pad) or not np.all(np.isfinite(x)):
            raise DomainError(f"x outside centerline domain [{self.x_min}, {self.x_max}] (+/- {pad:g} mm)")

    def _full(self, c):
        return np.concatenate([[0.0], c])

    def shape(self, x, derivative=0):
        """Centered coordinates (y, z) or their x-derivatives, without domain check."""
        u = self._u(x)
        scale = (2.0 / (self.x_max - self.x_min)) ** derivative
        cy = self._full(self.coeffs_y)
        cz = self._full(self.coeffs_z)
        if derivative:
            cy = C.chebder(cy, derivative)
            cz = C.chebder(cz, derivative)
        return C.chebval(u, cy) * scale, C.chebval(u, cz) * scale

    def position(self, x):
        """Absolute (N, 3) scanner-frame positions of the curve at x."""
        x = np.asarray(x, dtype=np.float64)
        y, z = self.shape(x)
        return np.stack([x, y + self.offset_y, z + self.offset_z], axis=-1)


def evaluate_centerline(c: Centerline, x):
    """Centered (y, z) of the centerline; the constant term is treated as zero."""
    c.check_domain(x)
    return c.shape(x)


def _design(u, n):
    # columns T_0 .. T_n; T_0 absorbs the offset and is split off afterwards
    return C.chebvander(u, n)


def _slice_circles(idx, pts, n_slices, counts, min_points):
    """Per-slice circle centres (algebraic least squares, solved for all slices at once).

    A circle fit stays centred on partial rings, which the oblique end cuts
    produce; slice centroids would be dragged towards the filled side.
    """
    def total(w):
        return np.bincount(idx, weights=w, minlength=n_slices)

    safe = np.maximum(counts, 1)
    xm, ym, zm = (total(pts[:, k]) / safe for k in range(3))
    u = pts[:, 1] - ym[idx]
    v = pts[:, 2] - zm[idx]
    w = u * u + v * v
    suu, suv, svv = total(u * u), total(u * v), total(v * v)
    su, sv, sw = total(u), total(v), total(w)
    # normal equations of  w = 2 a u + 2 b v + c
    M = np.empty((n_slices, 3, 3))
    M[:, 0] = np.stack([4 * suu, 4 * suv, 2 * su], 1)
    M[:, 1] = np.stack([4 * suv, 4 * svv, 2 * sv], 1)
    M[:, 2] = np.stack([2 * su, 2 * sv, counts.astype(np.float64)], 1)
    rhs = np.stack([2 * total(u * w), 2 * total(v * w), sw], 1)
    ok = counts >= max(min_points, 5)
    # a slice must see a real arc, not a sliver
    spread = np.sqrt(np.maximum(suu + svv, 0.0) / safe)
    ok &= spread > 0
    M[~ok] = np.eye(3)
    rhs[~ok] = 0.0
    cond = np.linalg.cond(M)
    ok &= cond < 1e12
    M[~ok] = np.eye(3)
    rhs[~ok] = 0.0
    sol = np.linalg.solve(M, rhs[..., None])[..., 0]
    radius = np.sqrt(np.maximum(sol[:, 2] + sol[:, 0] ** 2 + sol[:, 1] ** 2, 0.0))
    populated = counts[ok]
    if populated.size:
        # slices cut across a very short arc are unreliable
        ok &= counts >= 0.25 * float(np.median(populated))
        ok &= radius > 0
    return xm, ym + sol[:, 0], zm + sol[:, 1], ok


def fit_centerline(points, n: int = 5, slice_width: float = 10.0, min_points_per_slice: int = 3,
                   x_range=None) -> Centerline:
    """Fit a centerline to log surface points by per-slice circle centres.

    Points are binned along x; each slice's fitted (y, z) circle centre gets
    equal weight. The centre sequence is fitted with Chebyshev terms T_0..T_n and the
    T_0 part becomes the stored offset, so the returned shape coefficients
    describe the centered curve.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if n < 1:
        raise ValueError("n must be >= 1")
    if x_range is None:
        x_min, x_max = float(pts[:, 0].min()), float(pts[:, 0].max())
    else:
        x_min, x_max = map(float, x_range)
    if not x_max > x_min:
        raise ValueError("points do not span a positive x range")
    n_slices = max(1, int(np.ceil((x_max - x_min) / slice_width)))
    edges = np.linspace(x_min, x_max, n_slices + 1)
    idx = np.clip(np.searchsorted(edges, pts[:, 0], side="right") - 1, 0, n_slices - 1)
    counts = np.bincount(idx, minlength=n_slices)
    xc, yc, zc, ok = _slice_circles(idx, pts, n_slices, counts, min_points_per_slice)
    if ok.sum() < n + 1:
        raise ValueError(f"only {int(ok.sum())} usable slices; need at least {n + 1}")
    xc, yc, zc = xc[ok], yc[ok], zc[ok]
    tmp = Centerline(np.zeros(n), np.zeros(n), x_min, x_max)
    A = _design(tmp._u(xc), n)
    ky = linear_least_squares(A, yc)
    kz = linear_least_squares(A, zc)
    return Centerline(ky[1:], kz[1:], x_min, x_max, offset_y=float(ky[0]), offset_z=float(kz[0]))
