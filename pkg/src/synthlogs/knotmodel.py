"""Geometric knot model.

A knot is described in its own frame ``(s, l, rho)`` (arc coordinate, height,
distance from the pith). Its center curve rises as

    K_l(rho) = alpha_l * (1 - exp(-E_l * rho / max(0, rho_max - rho))) + L_l * rho

and its radius, measured along the center curve's arc length ``c``, grows as

    K_r(c) = alpha_r * (1 - exp(-E_r * c / max(0, c_max - c))) + L_r * c

The shape coefficients are not stored. Instead the bounded ratios
``phi0, phi1`` (for K_l) and ``psi0, psi1`` (for K_r) are used:

    L = phi1 * delta / rho_max      (endpoint slope as a fraction of the chord slope)
    alpha = delta * (1 - phi1)      (so alpha >= 0)
    E = 2 / phi0                    (E >= 2 is exactly the concavity condition)

The same map with (r_max, c_max, psi0, psi1) gives the radius coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import partial

import numpy as np
from scipy import integrate

from .logcentric import Heightmap, heightmap_sample

PARAM_NAMES = ("s0", "l0", "gamma", "rho_max", "phi0", "phi1", "r_max", "psi0", "psi1")

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


class KnotModelError(ValueError):
    pass


@dataclass(frozen=True)
class KnotParams:
    s0: float
    l0: float
    gamma: float
    rho_max: float
    phi0: float
    phi1: float
    r_max: float
    psi0: float
    psi1: float

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v):
                raise KnotModelError(f"{f.name} is not finite")
            object.__setattr__(self, f.name, v)

    def validate(self):
        """Raise :class:`KnotModelError` naming the first violated range."""
        if not self.gamma > 0:
            raise KnotModelError("gamma must be > 0")
        if not self.rho_max > 0:
            raise KnotModelError("rho_max must be > 0")
        if not self.r_max > 0:
            raise KnotModelError("r_max must be > 0")
        for name in ("phi0", "phi1", "psi0", "psi1"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise KnotModelError(f"{name} must lie in (0, 1]")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, a) -> "KnotParams":
        return cls(*[float(v) for v in np.asarray(a).ravel()[:9]])

    def replace(self, **kw) -> "KnotParams":
        d = {n: getattr(self, n) for n in PARAM_NAMES}
        d.update(kw)
        return KnotParams(**d)


@dataclass(frozen=True)
class ResolvedKnot:
    params: KnotParams
    delta_l: float
    c_max: float
    alpha_l: float
    L_l: float
    E_l: float
    alpha_r: float
    L_r: float
    E_r: float
    direction: float = 1.0

    @property
    def rho_max(self):
        return self.params.rho_max

    @property
    def r_max(self):
        return self.params.r_max


def _growth(alpha, L, E, x, x_max):
    """alpha * (1 - exp(-E x / max(0, x_max - x))) + L x, saturated past x_max."""
    x = np.asarray(x, dtype=np.float64)
    gap = np.maximum(0.0, x_max - x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g = np.where(gap > 0.0, E * x / np.where(gap > 0.0, gap, 1.0), np.inf)
    g = np.where(x <= 0.0, 0.0, g)
    return alpha * (1.0 - np.exp(-g)) + L * x


def _growth_slope(alpha, L, E, x, x_max):
    x = np.asarray(x, dtype=np.float64)
    gap = np.maximum(0.0, x_max - x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        safe = np.where(gap > 0.0, gap, 1.0)
        g = E * x / safe
        dg = E * x_max / (safe * safe)
        val = alpha * np.exp(-g) * dg
    return np.where(gap > 0.0, np.nan_to_num(val, nan=0.0, posinf=0.0), 0.0) + L


def resolve_knot(p: KnotParams, delta_l: float, c_max: float | None = None) -> ResolvedKnot:
    """Turn the 9 parameters plus the surface rise into curve coefficients.

    A negative ``delta_l`` describes a downward-growing knot; the curve is
    built from ``|delta_l|`` and mirrored in l.
    """
    if p.phi0 <= 0.0 or p.psi0 <= 0.0:
        raise KnotModelError("phi0 and psi0 must be > 0 (E = 2 / phi0)")
    if p.rho_max <= 0.0:
        raise KnotModelError("rho_max must be > 0")
    p.validate()
    direction = -1.0 if delta_l < 0 else 1.0
    d = abs(float(delta_l))
    L_l = p.phi1 * d / p.rho_max
    alpha_l = d * (1.0 - p.phi1)
    E_l = 2.0 / p.phi0
    partial = ResolvedKnot(p, float(delta_l), np.nan, alpha_l, L_l, E_l, 0.0, 0.0, 2.0, direction)
    if c_max is None:
        c_max = arc_length(partial, p.rho_max)
    L_r = p.psi1 * p.r_max / c_max
    alpha_r = p.r_max * (1.0 - p.psi1)
    E_r = 2.0 / p.psi0
    return ResolvedKnot(p, float(delta_l), float(c_max), alpha_l, L_l, E_l, alpha_r, L_r, E_r, direction)


def knot_axis(k: ResolvedKnot, rho):
    """Height of the knot center above its origin at distance rho from the pith."""
    return k.direction * _growth(k.alpha_l, k.L_l, k.E_l, rho, k.params.rho_max)


def knot_axis_slope(k: ResolvedKnot, rho):
    return k.direction * _growth_slope(k.alpha_l, k.L_l, k.E_l, rho, k.params.rho_max)


def knot_radius(k: ResolvedKnot, c):
    """Knot radius at arc length c along the center curve."""
    return _growth(k.alpha_r, k.L_r, k.E_r, c, k.c_max)


def _arc_integrand(k, t):
    dl = _growth_slope(k.alpha_l, k.L_l, k.E_l, t, k.params.rho_max)
    return np.sqrt(1.0 + dl * dl)


def _arc_integrand_scalar(alpha, L, E, x_max, t):
    # scalar twin of _arc_integrand for quad, which calls it point by point
    gap = x_max - t
    if gap <= 0.0:
        return math.sqrt(1.0 + L * L)
    g = E * t / gap
    slope = L + (alpha * math.exp(-g) * E * x_max / (gap * gap) if g < 700.0 else 0.0)
    return math.sqrt(1.0 + slope * slope)


def arc_length(k: ResolvedKnot, rho, rtol: float = 1e-6):
    """Length of the center curve between the pith and rho (adaptive quadrature)."""
    rho_arr = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    if np.any(rho_arr < 0):
        raise KnotModelError("rho must be >= 0")
    out = np.empty_like(rho_arr)
    rmax = k.params.rho_max
    for i, r in enumerate(rho_arr):
        if r == 0.0:
            out[i] = 0.0
            continue
        f = partial(_arc_integrand_scalar, k.alpha_l, k.L_l, k.E_l, rmax)
        # the integrand changes character at rho_max; split there
        if r > rmax:
            a, ea = integrate.quad(f, 0.0, rmax, epsrel=rtol * 0.1, limit=200)
            b = (r - rmax) * np.sqrt(1.0 + k.L_l ** 2)
            val, err = a + b, ea
        else:
            val, err = integrate.quad(f, 0.0, r, epsrel=rtol * 0.1, limit=200)
        if not np.isfinite(val) or err > rtol * max(val, 1e-300) * 10:
            raise KnotModelError("arc length quadrature did not converge")
        out[i] = val
    return out[0] if np.ndim(rho) == 0 else out


def arc_length_table(k: ResolvedKnot, rho_grid):
    """Cumulative arc length on an increasing grid starting at 0 (Gauss-Legendre per interval).

    Vectorized stand-in for :func:`arc_length` used in the fitting hot path.
    """
    r = np.asarray(rho_grid, dtype=np.float64)
    a, b = r[:-1], r[1:]
    half = 0.5 * (b - a)
    t = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X
    seg = half * (_arc_integrand(k, t) @ _GL_W)
    return np.concatenate([[0.0], np.cumsum(seg)])


def surface_rise(p: KnotParams, h: Heightmap, theta0: float, tan_tau: float,
                 max_iter: int = 10, tol: float = 0.1):
    """Find the rise delta_l at which a knot with mean incline tan_tau meets the surface.

    Fixed-point iteration ``delta <- H(theta0, l0 + delta) * tan_tau``.

    Returns:
        (delta_l, rho_max)
    """
    delta = 0.0
    rho = float("nan")
    for _ in range(max_iter):
        l = p.l0 + delta
        if not h.l_min <= l <= h.l_max:
            raise KnotModelError(f"knot at l0={p.l0:.1f} leaves the heightmap while rising (l={l:.1f})")
        rho = float(heightmap_sample(h, theta0, l))
        new = rho * tan_tau
        done = abs(new - delta) < tol
        delta = new
        if done:
            break
    l = p.l0 + delta
    if not h.l_min <= l <= h.l_max:
        raise KnotModelError(f"knot at l0={p.l0:.1f} leaves the heightmap while rising (l={l:.1f})")
    rho = float(heightmap_sample(h, theta0, l))
    return delta, rho


def axis_frame(k: ResolvedKnot, rho):
    """Center, unit tangent, horizontal and vertical normals of the center curve in (s, l, rho)."""
    rho = np.asarray(rho, dtype=np.float64)
    p = k.params
    slope = knot_axis_slope(k, rho)
    center = np.stack([np.full_like(rho, p.s0), p.l0 + knot_axis(k, rho), rho], axis=-1)
    norm = np.sqrt(1.0 + slope * slope)
    tangent = np.stack([np.zeros_like(rho), slope / norm, 1.0 / norm], axis=-1)
    e_h = np.broadcast_to(np.array([1.0, 0.0, 0.0]), center.shape)
    e_v = np.stack([np.zeros_like(rho), 1.0 / norm, -slope / norm], axis=-1)
    return center, tangent, e_h, e_v


def knot_shell(k: ResolvedKnot, samples_axis: int = 32, samples_angle: int = 24):
    """Shell points in knot-frame (s, l, rho), shaped (samples_axis, samples_angle, 3)."""
    if samples_axis < 4 or samples_angle < 4:
        raise ValueError("sample counts must be >= 4")
    rho = np.linspace(0.0, k.params.rho_max, samples_axis)
    c = arc_length_table(k, rho)
    c[-1] = k.c_max
    rad = knot_radius(k, c)
    center, _, e_h, e_v = axis_frame(k, rho)
    ang = np.linspace(0.0, 2.0 * np.pi, samples_angle, endpoint=False)
    a = rad[:, None, None] * np.cos(ang)[None, :, None] * e_h[:, None, :]
    b = (k.params.gamma * rad)[:, None, None] * np.sin(ang)[None, :, None] * e_v[:, None, :]
    return center[:, None, :] + a + b


def knot_body_points(k: ResolvedKnot, theta_mean: float, samples_axis: int = 32, samples_angle: int = 24):
    """Sampled knot shell as log-centric ``(theta, l, rho)`` points, ``((samples_axis - 1) * samples_angle, 3)``.

    The zero-radius ring at the pith carries no angle information and is dropped.
    """
    shell = knot_shell(k, samples_axis, samples_angle)[1:].reshape(-1, 3)
    # near the pith a tilted cross-section can dip past rho = 0
    rho = np.maximum(shell[:, 2], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.where(rho > 0, shell[:, 0] / np.where(rho > 0, rho, 1.0), 0.0) + theta_mean
    return np.stack([np.mod(th, 2.0 * np.pi), shell[:, 1], rho], axis=1)
