"""Generation of synthetic logs from ModelStatistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .centerline import Centerline
from .fitting import AnnotatedLogData, KnotAnnotation, KnotRecord, LogModel, reconstruct
from .knotmodel import KnotModelError, KnotParams, knot_body_points, resolve_knot, surface_rise
from .logcentric import TWO_PI, Heightmap, curve_table, from_log_centric, heightmap_sample
from .stats import ModelStatistics, StatisticsError, knot_from_stat_space, surface_knot_from_stat_space
from .surfacemodel import (SK_ALPHA_RANGE, SK_M_RANGE, BaseShape, ClusterBump, GrainConfig, Grid, SurfaceKnot,
                           SurfaceModelError, ThicknessModel, base_grid)

logger = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    seed: int = 0
    log_length: float | None = None       # mm; drawn from the statistics' length range when None
    n_theta: int = 256
    cell_length: float = 5.0               # mm per heightmap row
    grain: GrainConfig | None = GrainConfig()
    end_margin: float = 100.0              # whorl-free zone at each end, mm
    min_radius: float = 30.0
    max_attempts: int = 10
    point_density: float = 0.1             # surface points per mm^2
    knot_samples_axis: int = 40
    knot_samples_angle: int = 24
    outputs: tuple = ("heightmap", "point_cloud", "mesh", "knot_labels")

    def __post_init__(self):
        if self.log_length is not None and not self.log_length > 0:
            raise ValueError("log_length must be > 0")
        if self.n_theta < 64:
            raise ValueError("n_theta must be >= 64")
        if not self.cell_length > 0:
            raise ValueError("cell_length must be > 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def n_l(self, length):
        n = int(round(length / self.cell_length))
        if n < 64:
            raise ValueError(f"log of {length:.0f} mm gives {n} rows at {self.cell_length} mm; need >= 64")
        return n


@dataclass
class GeneratedLog:
    model: LogModel
    heightmap: Heightmap
    knot_shells: list                      # log-centric (theta, l, rho) points per knot, clipped to the log
    attempts: int = 1
    notes: list = field(default_factory=list)


def _place_whorls(stats: ModelStatistics, rng, l_lo, l_hi):
    centers = []
    pos = l_lo + rng.uniform(0.0, 1.0) * stats.whorls.sample_spacing(rng)
    while pos <= l_hi:
        centers.append(pos)
        pos += max(stats.whorls.sample_spacing(rng), 1.0)
    return centers


def _draw_knot(hg, mu, sigma, rng):
    y = hg.sample_members(mu, sigma, 1, rng)
    return knot_from_stat_space(y)[0]


def _build_knot(vec, center, theta_mean, h_base: Heightmap):
    s0, off, gamma, _, phi0, phi1, r_max, psi0, psi1, tau = vec
    l0 = center + off
    if not h_base.l_min <= l0 <= h_base.l_max:
        raise KnotModelError("knot origin falls outside the log")
    p = KnotParams(s0, l0, gamma, 1.0, phi0, phi1, r_max, psi0, psi1)
    rho = float(heightmap_sample(h_base, theta_mean, l0))
    delta = 0.0
    # the exit angle depends on rho_max through s0 / rho_max; two passes settle it
    for _ in range(2):
        delta, rho = surface_rise(p, h_base, theta_mean + s0 / rho, float(np.tan(tau)))
    p = p.replace(rho_max=rho)
    p.validate()
    k = resolve_knot(p, delta)
    if not r_max < rho:
        raise KnotModelError("knot radius exceeds the log radius")
    return p, delta, k


def _surface_knot_ok(sk: SurfaceKnot, rho_max: float) -> bool:
    # same box the fits live in; the centre may not move the surface by more than 10 %
    try:
        sk.validate()
    except SurfaceModelError:
        return False
    inside = (SK_ALPHA_RANGE[0] <= sk.alpha_theta <= SK_ALPHA_RANGE[1]
              and SK_ALPHA_RANGE[0] <= sk.alpha_l <= SK_ALPHA_RANGE[1] and SK_M_RANGE[0] <= sk.m <= SK_M_RANGE[1])
    return inside and abs(sk.amplitude * (sk.m - 1.0)) <= 0.1 * rho_max


def _attempt(stats: ModelStatistics, cfg: GenerationConfig, rng) -> GeneratedLog:
    notes = []
    # (1) centerline
    lo, hi = stats.length_range
    length = float(cfg.log_length if cfg.log_length is not None else rng.uniform(lo, hi))
    n_cl = stats.centerline_terms
    cl_coeffs = stats.centerline_mvn.sample(rng)
    c = Centerline(cl_coeffs[:n_cl], cl_coeffs[n_cl:], 0.0, length)
    l_max = float(c.x_min + curve_table(c).arc(c.x_max))
    grid = Grid(cfg.n_theta, cfg.n_l(l_max), 0.0, l_max)

    # (2) thickness and whorl layout
    a, b0 = stats.thickness.line.sample(rng)
    centers = _place_whorls(stats, rng, cfg.end_margin, l_max - cfg.end_margin)
    bumps = []
    for ctr in centers:
        bumps.append(ClusterBump(ctr, stats.thickness.bump_alpha.sample(rng), stats.thickness.bump_beta.sample(rng),
                                 max(abs(stats.thickness.bump_gamma.sample(rng)), 5.0)))
    thickness = ThicknessModel(float(a), float(b0), tuple(bumps))

    # (3) base shape with the constant band taken from the thickness profile
    coeffs = stats.base_shape_mean + stats.base_shape_sd * rng.standard_normal(stats.base_shape_mean.shape)
    coeffs[:, 0] = 0.0
    base = BaseShape(coeffs, 0.0, l_max)
    base_vals = base_grid(base, grid, thickness)
    if not np.all(base_vals > cfg.min_radius):
        raise SurfaceModelError(f"base surface drops below {cfg.min_radius} mm")
    h_base = Heightmap(base_vals, 0.0, l_max)

    # (4, 5) knot hierarchy and surface intersections
    hg = stats.knot_params
    log_mean = hg.sample_log_mean(rng)
    knots = []
    for ci, ctr in enumerate(centers):
        mu, sigma = hg.sample_cluster(rng, log_mean)
        for ki in range(stats.whorls.sample_count(rng)):
            theta_mean = float(rng.uniform(0.0, TWO_PI))
            for tries in range(cfg.max_attempts):
                vec = _draw_knot(hg, mu, sigma, rng)
                try:
                    p, delta, _ = _build_knot(vec, ctr, theta_mean, h_base)
                    break
                except (KnotModelError, ValueError) as exc:
                    notes.append(f"cluster {ci} knot {ki}: redrawn ({exc})")
            else:
                raise KnotModelError(f"cluster {ci} knot {ki}: no valid draw in {cfg.max_attempts} tries")
            knots.append(KnotRecord(p, float(delta), theta_mean, f"c{ci}k{ki}", str(ci)))

    # (6) surface knots at the intersections
    surface_knots = []
    for k in knots:
        for tries in range(cfg.max_attempts):
            alpha_t, alpha_l, m, amp = surface_knot_from_stat_space(stats.surface_knot_mvn.sample(rng))[0]
            sk = SurfaceKnot(k.exit_theta, k.exit_l, k.params.r_max, k.params.gamma, float(alpha_t), float(alpha_l),
                             float(m), float(amp))
            if _surface_knot_ok(sk, k.params.rho_max):
                break
            notes.append(f"surface knot {k.knot_id}: redrawn")
        else:
            raise SurfaceModelError(f"surface knot {k.knot_id}: no valid draw in {cfg.max_attempts} tries")
        surface_knots.append(sk)

    # (7) grain, composed through the same path used for reconstruction
    grain = replace(cfg.grain, seed=int(rng.integers(2 ** 31))) if cfg.grain is not None else GrainConfig(amplitude=0.0)
    model = LogModel(c, thickness, base, surface_knots, grain, knots, grid.n_theta, grid.n_l, thickness_band=True,
                     metadata={"kind": "generated", "seed": int(cfg.seed)})
    h, _ = reconstruct(model)

    # (8) knot geometry clipped to the log volume
    shells = []
    for k in knots:
        pts = knot_body_points(k.resolve(), k.theta_mean, cfg.knot_samples_axis, cfg.knot_samples_angle)
        inside = (pts[:, 1] >= h.l_min) & (pts[:, 1] <= h.l_max)
        pts = pts[inside]
        pts = pts[pts[:, 2] < heightmap_sample(h, pts[:, 0], pts[:, 1])]
        shells.append(pts)
    return GeneratedLog(model, h, shells, notes=notes)


def generate_log(stats: ModelStatistics, cfg: GenerationConfig | None = None, index: int = 0) -> GeneratedLog:
    """Generate one log; invalid samples are redrawn up to ``cfg.max_attempts`` times.

    The random stream is derived from ``(cfg.seed, index)`` so logs generated
    in parallel are reproducible individually.
    """
    cfg = cfg or GenerationConfig()
    stats.validate()
    errors = []
    for attempt in range(cfg.max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(index), attempt]))
        try:
            out = _attempt(stats, cfg, rng)
            out.attempts = attempt + 1
            out.model.metadata["index"] = int(index)
            return out
        except (SurfaceModelError, KnotModelError, StatisticsError, ValueError) as exc:
            errors.append(str(exc))
            logger.info("generation attempt %d failed: %s", attempt, exc)
    raise GenerationError(f"no valid log after {cfg.max_attempts} attempts; last error: {errors[-1]}")


def surface_area(h: Heightmap):
    """Surface area of the heightmap tube, ignoring the slope of the surface, mm^2."""
    return float(h.values.sum() * h.dtheta * h.dl)


def sample_surface_points(model: LogModel, h: Heightmap, density: float, rng) -> np.ndarray:
    """Stratified random surface points (Cartesian, mm).

    Each cell receives ``density * cell area`` points on average (integer
    part plus one Bernoulli extra), uniformly within the cell, lifted to the
    bilinear surface and mapped through the centerline.
    """
    if not density > 0:
        raise ValueError("density must be > 0")
    expected = density * h.values * h.dtheta * h.dl
    counts = np.floor(expected).astype(np.int64)
    counts += rng.random(expected.shape) < (expected - counts)
    flat = counts.ravel()
    cell = np.repeat(np.arange(flat.size), flat)
    i, j = np.divmod(cell, h.n_theta)
    theta = (j + rng.uniform(-0.5, 0.5, cell.size)) * h.dtheta
    l = h.l_min + (i + rng.uniform(0.0, 1.0, cell.size)) * h.dl
    l = np.clip(l, h.l_min, h.l_max)
    rho = heightmap_sample(h, theta, l)
    q = np.stack([np.mod(theta, TWO_PI), l, rho], axis=1)
    return from_log_centric(q, model.centerline)


def to_annotated(gen: GeneratedLog, density: float, rng, name: str = "log") -> AnnotatedLogData:
    """Surface point cloud plus Cartesian knot annotations of a generated log."""
    pts = sample_surface_points(gen.model, gen.heightmap, density, rng)
    anns = []
    for k, shell in zip(gen.model.knots, gen.knot_shells):
        anns.append(KnotAnnotation(k.knot_id, from_log_centric(shell, gen.model.centerline), k.cluster_id))
    return AnnotatedLogData(pts, anns, name)
