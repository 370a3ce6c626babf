"""Fitting the log model to annotated point clouds."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .centerline import Centerline, fit_centerline
from .knotmodel import (KnotModelError, KnotParams, ResolvedKnot, arc_length_table, axis_frame,
                        knot_body_points, knot_radius, resolve_knot)
from .logcentric import TWO_PI, Heightmap, build_heightmap, from_log_centric, heightmap_sample, to_knot_frame, to_log_centric
from .optim import BoxTransform, LMOptions, OptimizationError, levenberg_marquardt
from .surfacemodel import (BaseShape, GrainConfig, Grid, SurfaceKnot, ThicknessModel, base_grid, compose_heightmap,
                           fit_base_shape, fit_surface_knot, fit_thickness)

logger = logging.getLogger(__name__)

N_STATIONS = 256


@dataclass
class KnotAnnotation:
    knot_id: str
    points: np.ndarray
    cluster_id: str | None = None


@dataclass
class AnnotatedLogData:
    surface_points: np.ndarray
    knots: list = field(default_factory=list)
    name: str = "log"

    def __post_init__(self):
        self.surface_points = np.asarray(self.surface_points, dtype=np.float64).reshape(-1, 3)
        ids = [k.knot_id for k in self.knots]
        if len(set(ids)) != len(ids):
            raise ValueError("knot ids must be unique")


@dataclass(frozen=True)
class KnotRecord:
    """A fitted or generated internal knot with the quantities needed to resolve it."""

    params: KnotParams
    delta_l: float
    theta_mean: float
    knot_id: str = ""
    cluster_id: str | None = None

    def resolve(self) -> ResolvedKnot:
        return resolve_knot(self.params, self.delta_l)

    @property
    def exit_theta(self) -> float:
        return float(np.mod(self.theta_mean + self.params.s0 / self.params.rho_max, TWO_PI))

    @property
    def exit_l(self) -> float:
        return self.params.l0 + self.delta_l


@dataclass
class LogModel:
    centerline: Centerline
    thickness: ThicknessModel
    base_shape: BaseShape
    surface_knots: list
    grain: GrainConfig
    knots: list
    n_theta: int = 256
    n_l: int = 512
    thickness_band: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def l_min(self):
        return self.base_shape.l_min

    @property
    def l_max(self):
        return self.base_shape.l_max

    @property
    def grid(self) -> Grid:
        return Grid(self.n_theta, self.n_l, self.l_min, self.l_max)


@dataclass
class KnotFitResult:
    params: KnotParams
    delta_l: float
    theta_mean: float
    rmse: float
    point_count: int
    converged: bool
    initial_rmse: float = float("nan")
    iterations: int = 0


@dataclass(frozen=True)
class FitConfig:
    centerline_terms: int = 5
    slice_width: float = 10.0
    n_theta: int = 256
    cell_length: float = 5.0
    n_fourier: int = 10
    m_cheb: int = 10
    cluster_gap: float = 150.0
    min_knot_points: int = 30
    thickness_gamma_guess: float = 50.0
    median_filter_cells: int = 3
    threads: int = 1
    grain: GrainConfig = GrainConfig()


@dataclass
class LogFitReport:
    name: str
    knot_rows: list = field(default_factory=list)
    skipped_knots: list = field(default_factory=list)
    stage_failures: dict = field(default_factory=dict)
    surface_rmse: float = float("nan")

    @property
    def knot_rmses(self):
        return np.array([r["rmse"] for r in self.knot_rows], dtype=np.float64)

    def summary(self):
        return rmse_summary(self.knot_rmses)

    def to_dict(self):
        s = self.summary()
        return {"name": self.name, "knots": self.knot_rows, "skipped_knots": self.skipped_knots,
                "stage_failures": self.stage_failures, "surface_rmse": self.surface_rmse,
                "rmse_mean": s["mean"], "rmse_sd": s["sd"], "knot_count": s["count"]}


def rmse_summary(rmses):
    r = np.asarray(rmses, dtype=np.float64)
    if r.size == 0:
        return {"mean": float("nan"), "sd": float("nan"), "count": 0}
    sd = float(r.std(ddof=1)) if r.size > 1 else 0.0
    return {"mean": float(r.mean()), "sd": sd, "count": int(r.size)}


def format_rmse_table(reports) -> str:
    """Per-log knot counts and RMSE mean / sd, one column per log plus an "All logs" column."""
    names = [r.name for r in reports]
    per = [r.summary() for r in reports]
    allr = rmse_summary(np.concatenate([r.knot_rmses for r in reports]) if reports else [])
    cols = names + ["All logs"]
    stats = per + [allr]
    w = max(8, *(len(c) for c in cols))

    def fmt(v, spec):
        return format(v, spec).rjust(w) if np.isfinite(v) else "-".rjust(w)

    lines = ["Log".ljust(10) + "".join(c.rjust(w + 1) for c in cols),
             "Knots".ljust(10) + "".join(" " + str(s["count"]).rjust(w) for s in stats),
             "RMSE mu".ljust(10) + "".join(" " + fmt(s["mean"], ".2f") for s in stats),
             "     sigma".ljust(10) + "".join(" " + fmt(s["sd"], ".2f") for s in stats)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# clustering


def cluster_knots(l0s, threshold: float = 150.0):
    """Split sorted knot heights wherever consecutive gaps exceed ``threshold``.

    Returns:
        (labels, centers): ``labels[i]`` indexes ``centers`` for knot i.
    """
    l0s = np.asarray(l0s, dtype=np.float64).ravel()
    if l0s.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    order = np.argsort(l0s, kind="stable")
    breaks = np.diff(l0s[order]) > threshold
    sorted_labels = np.concatenate([[0], np.cumsum(breaks)])
    labels = np.empty_like(sorted_labels)
    labels[order] = sorted_labels
    centers = np.array([l0s[labels == c].mean() for c in range(sorted_labels[-1] + 1)])
    return labels, centers


# ---------------------------------------------------------------------------
# knot fitting


def _axis_geometry(k: ResolvedKnot, rho):
    center, tangent, e_h, e_v = axis_frame(k, rho)
    return center, tangent, e_h, e_v


def shell_residuals(k: ResolvedKnot, pts, n_stations: int = N_STATIONS):
    """Signed distance of knot-frame points to the knot shell.

    The nearest of ``n_stations`` samples of the center curve is refined by
    projecting onto the adjacent polyline segments; the residual is the
    distance to the curve minus the elliptical cross-section radius in the
    point's direction.
    """
    p = k.params
    rho_s = np.linspace(0.0, p.rho_max, n_stations)
    cum = arc_length_table(k, rho_s)
    centers, *_ = axis_frame(k, rho_s)
    j = kernels.nearest_station(pts, centers)
    best_t = np.zeros(len(pts))
    best_seg = np.clip(j, 0, n_stations - 2)
    best_d = np.full(len(pts), np.inf)
    for seg in (np.clip(j - 1, 0, n_stations - 2), np.clip(j, 0, n_stations - 2)):
        a = centers[seg]
        ab = centers[seg + 1] - a
        t = np.clip(np.sum((pts - a) * ab, axis=1) / np.maximum(np.sum(ab * ab, axis=1), 1e-300), 0.0, 1.0)
        d = np.sum((pts - (a + t[:, None] * ab)) ** 2, axis=1)
        better = d < best_d
        best_d = np.where(better, d, best_d)
        best_t = np.where(better, t, best_t)
        best_seg = np.where(better, seg, best_seg)
    rho_star = rho_s[best_seg] + best_t * (rho_s[best_seg + 1] - rho_s[best_seg])
    c_star = cum[best_seg] + best_t * (cum[best_seg + 1] - cum[best_seg])
    center, tangent, e_h, e_v = axis_frame(k, rho_star)
    rad = knot_radius(k, c_star)
    d = pts - center
    a = np.sum(d * e_h, axis=1)
    b = np.sum(d * e_v, axis=1)
    dist = np.linalg.norm(d, axis=1)
    ab = np.hypot(a, b)
    g = p.gamma
    with np.errstate(invalid="ignore", divide="ignore"):
        ell = np.where(ab > 1e-12, rad * g * ab / np.sqrt((g * a) ** 2 + b * b), rad)
    return dist - ell


# LM works on (s0, l0, gamma, phi0, phi1, r_max, psi0, psi1, delta_l, frame rotation)
# [+ rho_max without a heightmap]
_KNOT_KINDS = ["free", "free", "pos", "box", "box", "pos", "box", "box", "free", "free"]


def _knot_transform(with_rho: bool):
    kinds = list(_KNOT_KINDS) + (["pos"] if with_rho else [])
    n = len(kinds)
    return BoxTransform(kinds, lower=np.zeros(n), upper=np.ones(n))


def _robust_line(x, y):
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0, float(np.mean(y)) if y.size else 0.0
    A = np.column_stack([x, np.ones_like(x)])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(sol[0]), float(sol[1])


def _ratio_from_slopes(start_slope, end_slope, total, x_max):
    """Invert the (phi0, phi1) map from observed initial and final slopes."""
    chord = total / x_max if x_max > 0 else 0.0
    if chord <= 1e-9:
        return 0.5, 0.5
    phi1 = float(np.clip(end_slope / chord, 0.05, 0.95))
    alpha = total * (1.0 - phi1)
    L = phi1 * chord
    E = (start_slope - L) * x_max / max(alpha, 1e-9)
    phi0 = float(np.clip(2.0 / E, 0.05, 0.95)) if E > 0 else 0.95
    return phi0, phi1


def initial_knot_estimate(kf, rho_top, n_bins: int = 12):
    """Least-squares initial guess from a knot-frame point cloud.

    Points are binned along rho; per bin the cloud's mid-range gives a
    center-curve sample and its half-ranges give the cross-section axes.
    Line fits on the inner and outer 30% of the samples give the start and
    end slopes of both growth curves.
    """
    s, l, rho = kf[:, 0], kf[:, 1], kf[:, 2]
    inner = rho <= np.quantile(rho, 0.05)
    l0 = float(np.median(l[inner]))
    s0 = float(np.median(s[inner]))
    edges = np.linspace(rho.min(), rho.max(), n_bins + 1)
    idx = np.clip(np.searchsorted(edges, rho, side="right") - 1, 0, n_bins - 1)
    rb, lb, hr, vr = [], [], [], []
    for b in range(n_bins):
        sel = idx == b
        if sel.sum() < 3:
            continue
        rb.append(rho[sel].mean())
        lb.append(0.5 * (l[sel].min() + l[sel].max()))
        hr.append(0.5 * np.ptp(s[sel]))
        vr.append(0.5 * np.ptp(l[sel]))
    rb, lb, hr, vr = map(np.asarray, (rb, lb, hr, vr))
    if rb.size < 3:
        raise KnotModelError("too few populated radial bins to initialize a knot")
    n30 = max(2, int(round(0.3 * rb.size)))
    slope_out, icpt_out = _robust_line(rb[-n30:], lb[-n30:])
    slope_in, _ = _robust_line(np.concatenate([[0.0], rb[:n30]]), np.concatenate([[l0], lb[:n30]]))
    delta = slope_out * rho_top + icpt_out - l0
    sign = -1.0 if delta < 0 else 1.0
    phi0, phi1 = _ratio_from_slopes(sign * slope_in, sign * slope_out, abs(delta), rho_top)
    norm = np.sqrt(1.0 + slope_out ** 2)
    gamma = float(np.clip(np.median(vr[hr > 0] / hr[hr > 0] / norm) if np.any(hr > 0) else 1.0, 0.3, 3.0))
    # radius along the curve, approximating c by the chord
    c = np.hypot(rb, lb - l0)
    c_top = np.hypot(rho_top, delta)
    r_sl_out, r_ic_out = _robust_line(c[-n30:], hr[-n30:])
    r_max = float(max(r_sl_out * c_top + r_ic_out, hr.max(), 1e-3))
    r_sl_in, _ = _robust_line(np.concatenate([[0.0], c[:n30]]), np.concatenate([[0.0], hr[:n30]]))
    psi0, psi1 = _ratio_from_slopes(r_sl_in, max(r_sl_out, 0.0), r_max, c_top)
    return dict(s0=s0, l0=l0, gamma=gamma, phi0=phi0, phi1=phi1, r_max=r_max, psi0=psi0, psi1=psi1,
                delta_l=float(delta))


def fit_knot(points, h: Heightmap | None = None, opts: LMOptions | None = None,
             min_points: int = 30, restart_rmse: float | None = None) -> KnotFitResult:
    """Fit the 9-parameter knot model to log-centric ``(theta, l, rho)`` knot points.

    The knot frame starts at the circular mean angle of the points; a frame
    rotation is optimized along with the knot parameters so that a knot whose
    origin is off the mean angle (s0 != 0) is still inside the model family.
    With a heightmap, ``rho_max`` is tied to the surface height where the
    center curve exits (``H(theta_mean + s0 / rho_max, l0 + delta_l)``) and
    ``delta_l`` is optimized instead. Without one, both are optimized.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < min_points:
        raise KnotModelError(f"knot has {len(pts)} points; at least {min_points} are needed")
    # the angle of a point on the pith is undefined
    pts = pts[pts[:, 2] > 1e-6]
    if len(pts) < min_points:
        raise KnotModelError(f"knot has {len(pts)} off-pith points; at least {min_points} are needed")
    kf0, theta0 = to_knot_frame(pts)
    with_rho = h is None

    def rho_at(theta_mean, s0, l_exit, guess):
        if h is None:
            return guess
        l_exit = float(np.clip(l_exit, h.l_min, h.l_max))
        th = theta_mean + s0 / max(guess, 1e-6)
        return float(heightmap_sample(h, th, l_exit))

    rho_guess = float(kf0[:, 2].max())
    if h is not None:
        lt = kf0[kf0[:, 2] >= np.quantile(kf0[:, 2], 0.95), 1].mean()
        rho_guess = rho_at(theta0, 0.0, lt, rho_guess)
    init = initial_knot_estimate(kf0, rho_guess)
    if h is not None:
        rho_guess = rho_at(theta0, init["s0"], init["l0"] + init["delta_l"], rho_guess)
        init = initial_knot_estimate(kf0, rho_guess)
    x0 = [init[n] for n in ("s0", "l0", "gamma", "phi0", "phi1", "r_max", "psi0", "psi1", "delta_l")]
    x0.append(0.0)
    if with_rho:
        x0.append(rho_guess)
    tr = _knot_transform(with_rho)
    rho_pts = kf0[:, 2]

    def unpack(u):
        x = tr.to_external(u)
        s0, l0, gamma, phi0, phi1, r_max, psi0, psi1, delta, dtheta = x[:10]
        rho_max = x[10] if with_rho else rho_at(theta0 + dtheta, s0, l0 + delta, rho_guess)
        p = KnotParams(s0, l0, gamma, rho_max, phi0, phi1, r_max, psi0, psi1)
        return p, delta, dtheta

    def residuals(u):
        try:
            p, delta, dtheta = unpack(u)
            c_max = arc_length_table(_partial(p, delta), np.linspace(0.0, p.rho_max, 65))[-1]
            k = resolve_knot(p, delta, c_max=c_max)
        except (KnotModelError, ValueError):
            return np.full(len(kf0), np.nan)
        kf = kf0.copy()
        kf[:, 0] -= dtheta * rho_pts
        return shell_residuals(k, kf)

    def cost(u):
        r = residuals(u)
        return float(np.sqrt(np.mean(r ** 2))) if np.all(np.isfinite(r)) else float("inf")

    def run(x_start):
        u_start = tr.to_internal(np.asarray(x_start))
        try:
            u_end, rep = levenberg_marquardt(residuals, u_start, opts)
            return u_end, rep.converged, rep.iterations, cost(u_end)
        except OptimizationError:
            return u_start, False, 0, cost(u_start)

    init_rmse = cost(tr.to_internal(np.asarray(x0)))
    opts = opts or LMOptions(max_iterations=150, relative_cost_tolerance=1e-10)
    u, converged, iterations, best = run(x0)

    def pinned(u):
        # a shape ratio on its bound flattens the logistic and stalls descent
        ratios = tr.to_external(u)[[3, 4, 6, 7]]
        return bool(np.any((ratios < 1e-3) | (ratios > 1 - 1e-3)))

    # restart from neutral shape ratios when a ratio ends pinned, or when the
    # cost stays above an optional caller-supplied threshold
    def stalled():
        return pinned(u) or (restart_rmse is not None and best > restart_rmse)

    if stalled():
        for phi0, psi0 in ((0.5, 0.5), (0.8, 0.8), (0.3, 0.3)):
            xs = list(x0)
            xs[3], xs[6] = phi0, psi0
            xs[4] = xs[7] = 0.5
            cand = run(xs)
            iterations += cand[2]
            if cand[3] < best:
                u, converged, _, best = cand
            if not stalled():
                break
    p, delta, dtheta = unpack(u)
    res = residuals(u)
    rmse = float(np.sqrt(np.mean(res ** 2)))
    k = resolve_knot(p, delta)
    theta_mean = float(np.mod(theta0 + dtheta, TWO_PI))
    return KnotFitResult(k.params, float(delta), theta_mean, rmse, len(pts), bool(converged), init_rmse, iterations)


def _partial(p: KnotParams, delta):
    d = abs(delta)
    return ResolvedKnot(p, delta, np.nan, d * (1 - p.phi1), p.phi1 * d / p.rho_max, 2.0 / p.phi0, 0.0, 0.0, 2.0,
                        -1.0 if delta < 0 else 1.0)


# ---------------------------------------------------------------------------
# whole-log fitting


def _medium_band(h: Heightmap, base_values, cells: int):
    resid = h.values - base_values
    if cells <= 1:
        return h.with_values(resid)
    pad = cells // 2
    padded = np.pad(resid, ((pad, pad), (0, 0)), mode="edge")
    padded = np.pad(padded, ((0, 0), (pad, pad)), mode="wrap")
    filt = ndimage.median_filter(padded, size=cells, mode="nearest")
    return h.with_values(filt[pad:-pad, pad:-pad])


# grain-level noise dominates the medium band, so tight tolerances buy nothing here
_SURFACE_KNOT_OPTS = LMOptions(max_iterations=60, relative_cost_tolerance=1e-8)


def fit_log(data: AnnotatedLogData, config: FitConfig | None = None):
    """Fit centerline, surface and knots of one log.

    Returns:
        (LogModel, LogFitReport)
    """
    cfg = config or FitConfig()
    report = LogFitReport(data.name)
    c = fit_centerline(data.surface_points, cfg.centerline_terms, cfg.slice_width)
    surf = to_log_centric(data.surface_points, c)
    l_min, l_max = float(surf[:, 1].min()), float(surf[:, 1].max())
    n_l = max(16, int(round((l_max - l_min) / cfg.cell_length)))
    h = build_heightmap(surf, cfg.n_theta, n_l, (l_min, l_max))
    base = fit_base_shape(h, cfg.n_fourier, cfg.m_cheb)

    usable = []
    for ann in data.knots:
        if len(ann.points) < cfg.min_knot_points:
            report.skipped_knots.append({"knot_id": ann.knot_id, "points": int(len(ann.points)),
                                         "reason": "too few points"})
            continue
        usable.append(ann)
    local = [to_log_centric(ann.points, c) for ann in usable]

    # whorl centres from a rough origin height (innermost points) feed the
    # thickness fit, whose profile then serves as the constant band of the
    # surface the knots are tied to
    rough = np.array([np.median(q[q[:, 2] <= np.quantile(q[:, 2], 0.05), 1]) for q in local])
    _, pre_centers = _clusters(usable, rough, cfg.cluster_gap)
    thickness_band = True
    try:
        thickness = fit_thickness(h, pre_centers, cfg.thickness_gamma_guess)
    except Exception as exc:  # keep the rest of the model
        report.stage_failures["thickness"] = str(exc)
        thickness = ThicknessModel(0.0, float(np.mean(h.values)))
        thickness_band = False
    band = thickness if thickness_band else None
    base_vals = base_grid(base, Grid.of(h), band)
    h_base = h.with_values(base_vals)

    def work(q):
        return fit_knot(q, h_base, min_points=cfg.min_knot_points)

    if cfg.threads > 1 and len(local) > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(_safe(work), local))
    else:
        results = [_safe(work)(q) for q in local]

    fitted = []
    for ann, res in zip(usable, results):
        if isinstance(res, Exception):
            report.skipped_knots.append({"knot_id": ann.knot_id, "points": int(len(ann.points)),
                                         "reason": f"fit failed: {res}"})
            continue
        fitted.append((ann, res))

    labels, _ = _clusters([a for a, _ in fitted], np.array([r.params.l0 for _, r in fitted]), cfg.cluster_gap)
    knots = []
    for (ann, res), lab in zip(fitted, labels):
        knots.append(KnotRecord(res.params, res.delta_l, res.theta_mean, ann.knot_id, str(int(lab))))
        report.knot_rows.append({"knot_id": ann.knot_id, "cluster": int(lab), "points": res.point_count,
                                 "rmse": res.rmse, "initial_rmse": res.initial_rmse, "converged": res.converged})

    medium = _medium_band(h, base_vals, cfg.median_filter_cells)
    surface_knots, unreliable = [], []
    for kr in knots:
        l_exit = float(np.clip(kr.exit_l, h.l_min, h.l_max))
        radius = float(heightmap_sample(h_base, kr.exit_theta, l_exit))
        try:
            fit = fit_surface_knot(medium, kr.exit_theta, l_exit, kr.params.r_max, kr.params.gamma, radius,
                                   opts=_SURFACE_KNOT_OPTS, starts=((0.5, 1.5), (0.5, 3.0)))
            sk = fit.knot
            if fit.low_confidence or fit.degenerate:
                unreliable.append(kr.knot_id)
        except Exception as exc:
            report.stage_failures[f"surface_knot:{kr.knot_id}"] = str(exc)
            sk = SurfaceKnot(kr.exit_theta, l_exit, kr.params.r_max, kr.params.gamma, amplitude=0.0)
        surface_knots.append(sk)

    # surface knots listed here stay in the model but are left out of statistics
    model = LogModel(c, thickness, base, surface_knots, cfg.grain, knots, cfg.n_theta, n_l,
                     thickness_band=thickness_band,
                     metadata={"source": data.name, "kind": "fitted", "unreliable_surface_knots": unreliable})
    recon = compose_heightmap(Grid.of(h), base, surface_knots, None, thickness=band)
    report.surface_rmse = float(np.sqrt(np.mean((recon.values - h.values) ** 2)))
    return model, report


def _clusters(annotations, l0s, gap):
    """Cluster labels and centres; annotation cluster ids win when every knot has one."""
    labels, centers = cluster_knots(l0s, gap)
    given = [a.cluster_id for a in annotations]
    if given and all(g is not None for g in given):
        names = sorted(set(given), key=lambda g: float(np.mean([l for a, l in zip(annotations, l0s)
                                                                if a.cluster_id == g])))
        cluster_of = {g: i for i, g in enumerate(names)}
        labels = np.array([cluster_of[g] for g in given])
        centers = np.array([l0s[labels == i].mean() for i in range(len(names))])
    return labels, centers


def _safe(fn):
    def wrapped(arg):
        try:
            return fn(arg)
        except (KnotModelError, ValueError, OptimizationError) as exc:
            return exc
    return wrapped


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct(model: LogModel, grid: Grid | None = None, grain: bool = True,
                samples_axis: int = 32, samples_angle: int = 24):
    """Heightmap and knot shells (log-centric) of a model.

    Returns:
        (Heightmap, list of (samples_axis * samples_angle, 3) arrays)
    """
    grid = grid or model.grid
    thickness = model.thickness if model.thickness_band else None
    base_vals = base_grid(model.base_shape, grid, thickness)
    h = compose_heightmap(grid, model.base_shape, model.surface_knots, model.grain if grain else None,
                          thickness=thickness, grain_radius=float(base_vals.mean()))
    shells = [knot_body_points(k.resolve(), k.theta_mean, samples_axis, samples_angle) for k in model.knots]
    return h, shells


def to_cartesian(model: LogModel, log_centric_points):
    return from_log_centric(log_centric_points, model.centerline)
