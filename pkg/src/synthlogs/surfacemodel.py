"""Three-band log surface model.

* low band: a Fourier (around theta) x Chebyshev (along l) base shape, with an
  explicit thickness profile (line plus one Gaussian per knot cluster),
* medium band: difference-of-Gaussians bumps where knots reach the surface,
* high band: multi-octave sparse Gabor convolution noise for the grain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import chebyshev as C

from . import kernels
from .logcentric import TWO_PI, Heightmap
from .optim import BoxTransform, LMOptions, levenberg_marquardt, linear_least_squares


class SurfaceModelError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    n_theta: int
    n_l: int
    l_min: float
    l_max: float

    @classmethod
    def of(cls, h: Heightmap) -> "Grid":
        return cls(h.n_theta, h.n_l, h.l_min, h.l_max)

    def template(self) -> Heightmap:
        return Heightmap(np.zeros((self.n_l, self.n_theta)), self.l_min, self.l_max)

    @property
    def theta_centers(self):
        return np.arange(self.n_theta) * (TWO_PI / self.n_theta)

    @property
    def l_centers(self):
        dl = (self.l_max - self.l_min) / self.n_l
        return self.l_min + (np.arange(self.n_l) + 0.5) * dl


# ---------------------------------------------------------------------------
# thickness


@dataclass(frozen=True)
class ClusterBump:
    center: float
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class ThicknessModel:
    a: float
    b: float
    clusters: tuple = ()
    rmse: float = float("nan")

    def __post_init__(self):
        cl = tuple(c if isinstance(c, ClusterBump) else ClusterBump(*c) for c in self.clusters)
        for c in cl:
            if not c.gamma > 0:
                raise SurfaceModelError("cluster Gaussian width must be > 0")
        object.__setattr__(self, "clusters", cl)


def eval_thickness(t: ThicknessModel, l):
    l = np.asarray(l, dtype=np.float64)
    out = t.a * l + t.b
    for c in t.clusters:
        out = out + c.alpha * np.exp(-((l - (c.center + c.beta)) ** 2) / (2.0 * c.gamma ** 2))
    return out


def row_means(h: Heightmap):
    """Circumferential mean radius per row, using observed cells where available."""
    v = h.values
    m = h.mask
    cnt = m.sum(axis=1)
    mean_obs = np.where(cnt > 0, (v * m).sum(axis=1) / np.maximum(cnt, 1), v.mean(axis=1))
    return mean_obs, cnt > 0


def fit_thickness(h: Heightmap, cluster_centers, gamma_guess: float = 50.0,
                  opts: LMOptions | None = None) -> ThicknessModel:
    """Fit the line-plus-Gaussians thickness profile to a heightmap's row means."""
    l = h.l_centers
    y, ok = row_means(h)
    if ok.sum() < 3:
        raise SurfaceModelError("degenerate heightmap: fewer than 3 usable rows")
    l, y = l[ok], y[ok]
    centers = np.asarray(sorted(float(c) for c in cluster_centers), dtype=np.float64)
    far = np.ones(l.size, dtype=bool)
    for c in centers:
        far &= np.abs(l - c) > 3.0 * gamma_guess
    if far.sum() < 3:
        far = np.ones(l.size, dtype=bool)
    A = np.column_stack([l[far], np.ones(far.sum())])
    a, b = linear_least_squares(A, y[far])
    if centers.size == 0:
        rmse = float(np.sqrt(np.mean((a * l + b - y) ** 2)))
        return ThicknessModel(float(a), float(b), (), rmse)

    resid = y - (a * l + b)
    x0 = [a, b]
    for c in centers:
        near = np.abs(l - c) <= gamma_guess
        x0 += [float(resid[near].max()) if near.any() else 0.0, 0.0, gamma_guess]
    kinds = ["free", "free"] + ["free", "free", "pos"] * centers.size
    tr = BoxTransform(kinds)
    scale_l = max(1.0, float(np.abs(l).max()))

    def unpack(u):
        x = tr.to_external(u)
        x = x.copy()
        x[0] /= scale_l
        return x

    def model(x):
        out = x[0] * l + x[1]
        for i, c in enumerate(centers):
            al, be, ga = x[2 + 3 * i: 5 + 3 * i]
            out = out + al * np.exp(-((l - (c + be)) ** 2) / (2.0 * ga * ga))
        return out

    x0 = np.asarray(x0, dtype=np.float64)
    x0[0] *= scale_l  # slope in mm per full log length keeps LM well scaled
    u0 = tr.to_internal(x0)
    opts = opts or LMOptions(max_iterations=300, relative_cost_tolerance=1e-14, step_tolerance=1e-14)
    u, _ = levenberg_marquardt(lambda u: model(unpack(u)) - y, u0, opts)
    x = unpack(u)
    rmse = float(np.sqrt(np.mean((model(x) - y) ** 2)))
    clusters = tuple(ClusterBump(float(c), *map(float, x[2 + 3 * i: 5 + 3 * i])) for i, c in enumerate(centers))
    return ThicknessModel(float(x[0]), float(x[1]), clusters, rmse)


# ---------------------------------------------------------------------------
# base shape


def fourier_basis(theta, n: int):
    """Real Fourier basis [1, cos t, sin t, cos 2t, sin 2t, ...] truncated to n columns."""
    th = np.asarray(theta, dtype=np.float64)[..., None]
    k = np.arange(n)
    harm = (k + 1) // 2
    return np.where(k == 0, 1.0, np.where(k % 2 == 1, np.cos(harm * th), np.sin(harm * th)))


@dataclass(frozen=True)
class BaseShape:
    """``coeffs[i, k]`` multiplies ``T_i(u(l)) * fourier_k(theta)``."""

    coeffs: np.ndarray
    l_min: float
    l_max: float

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64)
        if c.ndim != 2:
            raise SurfaceModelError("base shape coefficients must be a 2-D (m_cheb, n_fourier) matrix")
        object.__setattr__(self, "coeffs", c)

    @property
    def m_cheb(self):
        return self.coeffs.shape[0]

    @property
    def n_fourier(self):
        return self.coeffs.shape[1]

    def _u(self, l):
        return (2.0 * np.asarray(l, dtype=np.float64) - (self.l_min + self.l_max)) / (self.l_max - self.l_min)

    def row_coefficients(self, l):
        """Fourier coefficients at heights l, shape (..., n_fourier)."""
        return C.chebvander(self._u(l), self.m_cheb - 1) @ self.coeffs


def fit_base_shape(h: Heightmap, n_fourier: int = 10, m_cheb: int = 10) -> BaseShape:
    """Project each heightmap row on the first Fourier terms, then fit each term along l."""
    if n_fourier > h.n_theta // 2:
        raise SurfaceModelError("n_fourier must be <= n_theta / 2")
    if m_cheb > h.n_l:
        raise SurfaceModelError("m_cheb must be <= n_l")
    row_ok = h.mask.mean(axis=1) >= 0.5
    if row_ok.mean() < 0.5:
        raise SurfaceModelError("more than 50% of heightmap rows are masked out")
    B = fourier_basis(h.theta_centers, n_fourier)
    norms = np.einsum("jk,jk->k", B, B)
    F = (h.values @ B) / norms
    tmp = BaseShape(np.zeros((m_cheb, n_fourier)), h.l_min, h.l_max)
    V = C.chebvander(tmp._u(h.l_centers), m_cheb - 1)
    coeffs = linear_least_squares(V[row_ok], F[row_ok])
    return BaseShape(coeffs.reshape(m_cheb, n_fourier), h.l_min, h.l_max)


def eval_base_shape(bs: BaseShape, theta, l, thickness: ThicknessModel | None = None):
    """Base radius at (theta, l); with ``thickness`` the constant Fourier band comes from it."""
    th = np.mod(np.asarray(theta, dtype=np.float64), TWO_PI)
    rc = bs.row_coefficients(l)
    if thickness is not None:
        rc = rc.copy()
        rc[..., 0] = eval_thickness(thickness, l)
    return np.sum(rc * fourier_basis(th, bs.n_fourier), axis=-1)


def base_grid(bs: BaseShape, grid: Grid, thickness: ThicknessModel | None = None):
    rc = bs.row_coefficients(grid.l_centers)
    if thickness is not None:
        rc = rc.copy()
        rc[:, 0] = eval_thickness(thickness, grid.l_centers)
    return rc @ fourier_basis(grid.theta_centers, bs.n_fourier).T


# ---------------------------------------------------------------------------
# surface knots


@dataclass(frozen=True)
class SurfaceKnot:
    theta: float
    l: float
    r: float
    gamma: float = 1.0
    alpha_theta: float = 0.5
    alpha_l: float = 0.5
    m: float = 2.0
    amplitude: float = 1.0

    def validate(self):
        if not (0.0 < self.alpha_theta < 1.0 and 0.0 < self.alpha_l < 1.0):
            raise SurfaceModelError("surface knot alpha multipliers must lie in (0, 1)")
        if not self.m > 1.0:
            raise SurfaceModelError("surface knot multiplier m must be > 1")
        if not (self.r > 0 and self.gamma > 0):
            raise SurfaceModelError("surface knot radius and ovality must be > 0")
        return self

    def sigmas(self):
        """((sigma1_theta, sigma2_theta), (sigma1_l, sigma2_l)) in mm."""
        out = []
        for rad, a in ((self.r, self.alpha_theta), (self.gamma * self.r, self.alpha_l)):
            s1 = dog_sigma1(rad, a, self.m)
            out.append((s1, a * s1))
        return tuple(out)


def dog_sigma1(r, alpha, m):
    """Wide-Gaussian width that puts the DoG zero crossing at distance r."""
    if not m > 1.0:
        raise SurfaceModelError("m must be > 1")
    return np.sqrt(r * r * (1.0 / (alpha * alpha) - 1.0) / (2.0 * np.log(m)))


def dog_1d(x, r, alpha, m):
    s1 = dog_sigma1(r, alpha, m)
    s2 = alpha * s1
    x = np.asarray(x, dtype=np.float64)
    # m weights the narrow Gaussian; only then does sigma1 place the zero crossing at r
    return m * np.exp(-x * x / (2.0 * s2 * s2)) - np.exp(-x * x / (2.0 * s1 * s1))


def surface_knot_imprint(k: SurfaceKnot, d_theta_arc, d_l):
    """Dimensionless elliptical DoG at arc offset d_theta_arc and height offset d_l (both mm)."""
    (s1t, s2t), (s1l, s2l) = k.sigmas()
    dt = np.asarray(d_theta_arc, dtype=np.float64)
    dl = np.asarray(d_l, dtype=np.float64)
    wide = np.exp(-0.5 * (dl * dl / (s1l * s1l) + dt * dt / (s1t * s1t)))
    narrow = np.exp(-0.5 * (dl * dl / (s2l * s2l) + dt * dt / (s2t * s2t)))
    return k.m * narrow - wide


FOOTPRINT = 3.0
_TAPER_START = 2.5


def footprint_imprint(k: SurfaceKnot, d_theta_arc, d_l):
    """Amplitude-scaled imprint, tapered to exactly zero beyond 3 wide-Gaussian widths."""
    (s1t, _), (s1l, _) = k.sigmas()
    dt = np.asarray(d_theta_arc, dtype=np.float64)
    dl = np.asarray(d_l, dtype=np.float64)
    q = np.sqrt(dl * dl / (s1l * s1l) + dt * dt / (s1t * s1t))
    t = np.clip((q - _TAPER_START) / (FOOTPRINT - _TAPER_START), 0.0, 1.0)
    window = 1.0 - t * t * (3.0 - 2.0 * t)
    return k.amplitude * surface_knot_imprint(k, dt, dl) * window


@dataclass
class SurfaceKnotFit:
    knot: SurfaceKnot
    rmse: float
    converged: bool
    degenerate: bool = False
    low_confidence: bool = False


def knot_window(h: Heightmap, theta, l, half_arc, half_l, radius):
    """Rows/columns of the cells around (theta, l) and their arc/height offsets in mm."""
    nj = int(np.ceil(half_arc / (radius * h.dtheta))) + 1
    ni = int(np.ceil(half_l / h.dl)) + 1
    jc = int(np.round(np.mod(theta, TWO_PI) / h.dtheta))
    ic = int(np.floor((l - h.l_min) / h.dl))
    rows = np.arange(max(ic - ni, 0), min(ic + ni + 1, h.n_l))
    cols = np.mod(np.arange(jc - nj, jc + nj + 1), h.n_theta)
    dth = np.mod(h.theta_centers[cols] - theta + np.pi, TWO_PI) - np.pi
    d_arc = dth[None, :] * radius
    d_l = (h.l_centers[rows] - l)[:, None]
    return rows, cols, np.broadcast_to(d_arc, (rows.size, cols.size)), np.broadcast_to(d_l, (rows.size, cols.size))


def fit_surface_knot(residual: Heightmap, theta, l, r, gamma, radius,
                     opts: LMOptions | None = None, max_iterations: int = 200, starts=None) -> SurfaceKnotFit:
    """Fit alpha_theta, alpha_l, m and amplitude of a bump of fixed radius r.

    ``residual`` is the medium-band heightmap (surface minus base shape) and
    ``radius`` the local log radius used to turn angle offsets into arc mm.
    """
    radius = float(radius)
    half = 4.0 * r * max(1.0, gamma)
    rows, cols, d_arc, d_l = knot_window(residual, theta, l, max(half, 3.0 * r), max(half, 3.0 * r * gamma), radius)
    patch = residual.values[np.ix_(rows, cols)]
    return fit_surface_knot_patch(patch, d_arc, d_l, theta, l, r, gamma, opts, max_iterations, starts)


# As m -> 1 or alpha -> 1 the DoG flattens and the amplitude grows without
# bound while the imprint barely changes, so fits are confined to a box and
# results pinned against its faces are flagged.
SK_ALPHA_RANGE = (0.1, 0.9)
SK_M_RANGE = (1.1, 8.0)
_SK_TRANSFORM = BoxTransform(["box", "box", "box", "free"], lower=[SK_ALPHA_RANGE[0]] * 2 + [SK_M_RANGE[0], 0.0],
                             upper=[SK_ALPHA_RANGE[1]] * 2 + [SK_M_RANGE[1], 1.0])


def surface_knot_pinned(k: SurfaceKnot, rel: float = 0.01) -> bool:
    """True when alpha or m sits within ``rel`` of the fitting box."""
    for v, (lo, hi) in ((k.alpha_theta, SK_ALPHA_RANGE), (k.alpha_l, SK_ALPHA_RANGE), (k.m, SK_M_RANGE)):
        tol = rel * (hi - lo)
        if v < lo + tol or v > hi - tol:
            return True
    return False


_SK_STARTS = tuple((a, m) for a in (0.3, 0.5, 0.7) for m in (1.5, 3.0))


def fit_surface_knot_patch(patch, d_arc, d_l, theta, l, r, gamma=1.0, opts=None, max_iterations=200, starts=None):
    """Fit a surface knot to a patch; ``starts`` lists (alpha, m) initial guesses."""
    patch = np.asarray(patch, dtype=np.float64)
    d_arc = np.asarray(d_arc, dtype=np.float64)
    d_l = np.asarray(d_l, dtype=np.float64)
    scale = float(np.sqrt(np.mean(patch ** 2)))
    if scale < 1e-12:
        k = SurfaceKnot(float(theta), float(l), float(r), float(gamma), 0.5, 0.5, 2.0, 0.0)
        return SurfaceKnotFit(k, 0.0, True, degenerate=True)

    def make(x):
        return SurfaceKnot(float(theta), float(l), float(r), float(gamma), *map(float, x))

    def resid(u):
        x = _SK_TRANSFORM.to_external(u)
        return footprint_imprint(make(x), d_arc, d_l).ravel() - patch.ravel()

    opts = opts or LMOptions(max_iterations=max_iterations, relative_cost_tolerance=1e-15, step_tolerance=1e-14)
    best = None
    centre = patch[np.unravel_index(np.argmin(d_arc ** 2 + d_l ** 2), patch.shape)]
    for a0, m0 in starts or _SK_STARTS:
        a0 = float(np.clip(a0, *SK_ALPHA_RANGE))
        m0 = float(np.clip(m0, *SK_M_RANGE))
        x0 = np.array([a0, a0, m0, centre / (m0 - 1.0)])
        u, rep = levenberg_marquardt(resid, _SK_TRANSFORM.to_internal(x0), opts)
        if best is None or rep.final_cost < best[1].final_cost:
            best = (u, rep)
    u, rep = best
    x = _SK_TRANSFORM.to_external(u)
    k = make(x)
    rmse = float(np.sqrt(2.0 * rep.final_cost / patch.size))
    degenerate = abs(k.amplitude) * (k.m - 1.0) < 1e-6 * max(scale, 1e-12)
    return SurfaceKnotFit(k, rmse, rep.converged, degenerate=degenerate,
                          low_confidence=not rep.converged or surface_knot_pinned(k))


# ---------------------------------------------------------------------------
# grain


@dataclass(frozen=True)
class GrainConfig:
    octaves: int = 4
    base_frequency: float = 0.15
    kernel_bandwidth: float = 4.0
    impulse_density: float = 0.05
    amplitude: float = 0.6
    persistence: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.octaves < 1:
            raise SurfaceModelError("octaves must be >= 1")
        if not 0.0 < self.persistence <= 1.0:
            raise SurfaceModelError("persistence must lie in (0, 1]")
        if self.amplitude < 0:
            raise SurfaceModelError("amplitude must be >= 0")
        if not (self.kernel_bandwidth > 0 and self.impulse_density > 0 and self.base_frequency >= 0):
            raise SurfaceModelError("bandwidth, density must be > 0 and frequency >= 0")

    @property
    def rms(self) -> float:
        """Expected standard deviation of the summed field."""
        p2 = sum(self.persistence ** (2 * o) for o in range(self.octaves))
        return self.amplitude * math.sqrt(p2 / 2.0)


def gabor_grain(grid: Grid, cfg: GrainConfig, radius: float, splat=None):
    """Sparse Gabor convolution noise on a heightmap grid (mm).

    Impulses with random signs are scattered as a Poisson process over the
    unrolled surface (circumference ``2 pi radius`` by the l range, padded in
    l by the kernel cutoff) and convolved with
    ``exp(-d^2 / (2 b^2)) * cos(2 pi f d_arc)``. The frequency points along
    the circumference, so ridges run along the log. Octave ``o`` doubles the
    frequency and scales the amplitude by ``persistence**o``; each octave is
    normalized so its standard deviation is ``amplitude * persistence**o / sqrt(2)``.
    """
    splat = splat or kernels.gabor_splat
    out = np.zeros((grid.n_l, grid.n_theta))
    if cfg.amplitude == 0.0:
        return out
    circ = TWO_PI * radius
    dx = circ / grid.n_theta
    length = grid.l_max - grid.l_min
    dy = length / grid.n_l
    b = cfg.kernel_bandwidth
    cutoff = 3.0 * b
    area = circ * (length + 2.0 * cutoff)
    for o in range(cfg.octaves):
        rng = np.random.default_rng([int(cfg.seed), o])
        f = cfg.base_frequency * 2.0 ** o
        n = rng.poisson(cfg.impulse_density * area)
        px = rng.uniform(0.0, circ, n)
        py = rng.uniform(-cutoff, length + cutoff, n)
        w = rng.choice(np.array([-1.0, 1.0]), n)
        energy = math.pi * b * b / 2.0 * (1.0 + math.exp(-((2.0 * math.pi * f * b) ** 2)))
        norm = cfg.amplitude * cfg.persistence ** o / math.sqrt(2.0 * cfg.impulse_density * energy)
        out += norm * splat(grid.n_l, grid.n_theta, dx, dy, px, py, w, f, b, cutoff)
    return out


# ---------------------------------------------------------------------------
# composition


def knots_grid(knots, grid: Grid, radius_map):
    """Sum of footprint imprints over the grid; ``radius_map`` gives local radius per cell."""
    out = np.zeros((grid.n_l, grid.n_theta))
    tmpl = Heightmap(radius_map, grid.l_min, grid.l_max)
    for k in knots:
        if k.amplitude == 0.0:
            continue
        (s1t, _), (s1l, _) = k.sigmas()
        i, j = _cell(tmpl, k.theta, k.l)
        rad = float(radius_map[i, j])
        rows, cols, d_arc, d_l = knot_window(tmpl, k.theta, k.l, FOOTPRINT * s1t, FOOTPRINT * s1l, rad)
        loc = radius_map[np.ix_(rows, cols)]
        d_arc = d_arc / rad * loc
        out[np.ix_(rows, cols)] += footprint_imprint(k, d_arc, d_l)
    return out


def _cell(h, theta, l):
    j = int(np.round(np.mod(theta, TWO_PI) / h.dtheta)) % h.n_theta
    i = int(np.clip(np.floor((l - h.l_min) / h.dl), 0, h.n_l - 1))
    return i, j


def compose_heightmap(grid: Grid, base: BaseShape, knots=(), grain: GrainConfig | None = None,
                      thickness: ThicknessModel | None = None, grain_radius: float | None = None) -> Heightmap:
    """Base shape (DC band from ``thickness`` when given) + knot bumps + grain."""
    values = base_grid(base, grid, thickness)
    if knots:
        values = values + knots_grid(knots, grid, values)
    if grain is not None and grain.amplitude > 0:
        radius = grain_radius if grain_radius is not None else float(values.mean())
        values = values + gabor_grain(grid, grain, radius)
    if not (np.all(np.isfinite(values)) and np.all(values > 0)):
        raise SurfaceModelError("composed heightmap has non-positive cells (nonphysical surface)")
    return Heightmap(values, grid.l_min, grid.l_max)
