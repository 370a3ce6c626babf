"""Parameter statistics and sampling.

Knot parameters follow a three-level compound Gaussian (log -> cluster ->
knot): a cluster draws its mean and its per-dimension spread from global
normals, and its knots draw from N(mu_c, (sigma_c sigma_c^T) * P) with the
elementwise product. Everything is estimated in an unconstrained space
(log / logit transforms) so that sampled values always land in their
valid ranges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .knotmodel import KnotParams
from .surfacemodel import eval_thickness

KNOT_DIMS = ("s0", "l0_offset", "gamma", "rho_max", "phi0", "phi1", "r_max", "psi0", "psi1", "tau")
# transform per dimension: (kind, upper bound for logit)
_KNOT_TRANSFORMS = (("free", 0), ("free", 0), ("log", 0), ("log", 0), ("logit", 1.0), ("logit", 1.0),
                    ("log", 0), ("logit", 1.0), ("logit", 1.0), ("logit", np.pi / 2))
SURFACE_KNOT_DIMS = ("alpha_theta", "alpha_l", "m", "amplitude")
_EDGE = 1e-6


class StatisticsError(ValueError):
    pass


def _forward(x, kind, upper):
    x = np.asarray(x, dtype=np.float64)
    if kind == "free":
        return x
    if kind == "log":
        return np.log(np.maximum(x, 1e-300))
    if kind == "log1":
        return np.log(np.maximum(x - 1.0, 1e-300))
    u = np.clip(x / upper, _EDGE, 1.0 - _EDGE)
    return np.log(u) - np.log1p(-u)


def _inverse(y, kind, upper):
    y = np.asarray(y, dtype=np.float64)
    if kind == "free":
        return y
    if kind == "log":
        return np.exp(np.clip(y, -700, 700))
    if kind == "log1":
        return 1.0 + np.exp(np.clip(y, -700, 700))
    return upper / (1.0 + np.exp(-np.clip(y, -700, 700)))


def knot_to_stat_space(x):
    """(N, 10) natural knot vectors (see ``KNOT_DIMS``) to the unconstrained space."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.column_stack([_forward(x[:, i], *t) for i, t in enumerate(_KNOT_TRANSFORMS)])


def knot_from_stat_space(y):
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    out = np.column_stack([_inverse(y[:, i], *t) for i, t in enumerate(_KNOT_TRANSFORMS)])
    bad = ~np.isfinite(out)
    if bad.any():
        dim = KNOT_DIMS[int(np.argwhere(bad)[0, 1])]
        raise StatisticsError(f"sampled knot parameter '{dim}' could not be mapped into its valid range")
    return out


_SK_TRANSFORMS = (("logit", 1.0), ("logit", 1.0), ("log1", 0), ("free", 0))


def surface_knot_to_stat_space(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return np.column_stack([_forward(x[:, i], *t) for i, t in enumerate(_SK_TRANSFORMS)])


def surface_knot_from_stat_space(y):
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return np.column_stack([_inverse(y[:, i], *t) for i, t in enumerate(_SK_TRANSFORMS)])


# ---------------------------------------------------------------------------
# linear algebra helpers


def repair_correlation(P, floor: float = 0.0):
    """Symmetrize, clip negative eigenvalues and restore the unit diagonal."""
    P = np.asarray(P, dtype=np.float64)
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() >= floor:
        out = P.copy()
    else:
        out = (V * np.maximum(w, floor)) @ V.T
    d = np.sqrt(np.clip(np.diag(out), 1e-300, None))
    out = out / np.outer(d, d)
    np.fill_diagonal(out, 1.0)
    return out


def repair_covariance(S):
    S = np.asarray(S, dtype=np.float64)
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() >= 0:
        return S
    return (V * np.maximum(w, 0.0)) @ V.T


def _factor(cov):
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -1e-9 * scale:
        raise StatisticsError("covariance is not positive semi-definite")
    return V * np.sqrt(np.maximum(w, 0.0))


def sample_mvn(mu, sigma, P, rng, size=None):
    """Draw from N(mu, (sigma sigma^T) * P) (elementwise product).

    The covariance is factored by a symmetric eigendecomposition, which also
    handles singular covariances (zero sigma gives exactly mu).
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    d = mu.size
    if sigma.shape != (d,) or P.shape != (d, d):
        raise StatisticsError("mu, sigma and P dimensions disagree")
    if np.any(sigma < 0):
        raise StatisticsError("sigma must be >= 0")
    return sample_cov(mu, np.outer(sigma, sigma) * P, rng, size)


def sample_cov(mean, cov, rng, size=None):
    mean = np.asarray(mean, dtype=np.float64)
    A = _factor(np.asarray(cov, dtype=np.float64))
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, mean.size))
    out = mean + z @ A.T
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# distributions


@dataclass
class NormalStat:
    mean: float
    sd: float
    count: int = 0
    defaulted: bool = False

    def sample(self, rng):
        return float(self.mean + self.sd * rng.standard_normal())


@dataclass
class MVNStat:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0
    defaulted: bool = False

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.cov = np.asarray(self.cov, dtype=np.float64).reshape(self.mean.size, self.mean.size)

    def sample(self, rng):
        return sample_cov(self.mean, self.cov, rng)


def _mvn_from_samples(rows, default: MVNStat) -> MVNStat:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        return MVNStat(default.mean, default.cov, 0, True)
    if len(rows) < 2:
        return MVNStat(rows.mean(axis=0), default.cov, len(rows), True)
    cov = np.atleast_2d(np.cov(rows, rowvar=False, ddof=0))
    return MVNStat(rows.mean(axis=0), repair_covariance(cov), len(rows), False)


@dataclass
class HierarchicalGaussian:
    """Compound Gaussian over a d-vector with log -> cluster -> knot nesting.

    ``global_mu_mean`` / ``global_mu_sd`` describe the spread of cluster
    means; ``log_mu_sd`` is the part of that spread shared by clusters of
    the same log. ``global_sigma_mean`` / ``global_sigma_sd`` describe the
    within-cluster standard deviations; ``correlation`` couples dimensions
    within a cluster.
    """

    names: tuple
    global_mu_mean: np.ndarray
    global_mu_sd: np.ndarray
    global_sigma_mean: np.ndarray
    global_sigma_sd: np.ndarray
    correlation: np.ndarray
    log_mu_sd: np.ndarray | None = None
    counts: dict = field(default_factory=dict)
    defaulted: dict = field(default_factory=dict)
    levels: tuple = ("log", "cluster", "knot")

    def __post_init__(self):
        d = len(self.names)
        for name in ("global_mu_mean", "global_mu_sd", "global_sigma_mean", "global_sigma_sd"):
            v = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if v.size != d:
                raise StatisticsError(f"{name} has {v.size} entries, expected {d}")
            setattr(self, name, v)
        self.log_mu_sd = (np.zeros(d) if self.log_mu_sd is None
                          else np.asarray(self.log_mu_sd, dtype=np.float64).ravel())
        self.correlation = np.asarray(self.correlation, dtype=np.float64).reshape(d, d)
        self.names = tuple(self.names)
        self.levels = tuple(self.levels)

    @property
    def dimension(self):
        return len(self.names)

    @property
    def cluster_mu_sd(self):
        return np.sqrt(np.maximum(self.global_mu_sd ** 2 - self.log_mu_sd ** 2, 0.0))

    def validate(self):
        P = self.correlation
        if not np.allclose(P, P.T, atol=1e-12):
            raise StatisticsError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(P), 1.0, atol=1e-12):
            raise StatisticsError("correlation matrix must have a unit diagonal")
        if np.linalg.eigvalsh(P).min() < -1e-9:
            raise StatisticsError("correlation matrix is not positive semi-definite")
        for name in ("global_mu_sd", "global_sigma_mean", "global_sigma_sd", "log_mu_sd"):
            v = getattr(self, name)
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise StatisticsError(f"{name} must be finite and >= 0")
        if not np.all(np.isfinite(self.global_mu_mean)):
            raise StatisticsError("global_mu_mean must be finite")
        return self

    def sample_log_mean(self, rng):
        return self.global_mu_mean + self.log_mu_sd * rng.standard_normal(self.dimension)

    def sample_cluster(self, rng, log_mean=None):
        """(mu_c, sigma_c) for one cluster; spreads are folded at zero."""
        centre = self.global_mu_mean if log_mean is None else log_mean
        sd = self.global_mu_sd if log_mean is None else self.cluster_mu_sd
        mu = centre + sd * rng.standard_normal(self.dimension)
        sigma = np.abs(self.global_sigma_mean + self.global_sigma_sd * rng.standard_normal(self.dimension))
        return mu, sigma

    def sample_members(self, mu, sigma, n, rng):
        return sample_mvn(mu, sigma, self.correlation, rng, size=n)


def fit_hierarchical(groups, names, shrink: bool = True, default: HierarchicalGaussian | None = None):
    """Method-of-moments fit from ``groups``: iterable of ``(log_key, (n_c, d) array)``.

    Between-cluster moments use population (ddof=0) averages over clusters so
    that duplicating the input leaves them unchanged; within-cluster spreads
    use ddof=1. The correlation is the pooled Pearson correlation of
    within-cluster standardized values, shrunk toward identity by
    ``1 / n_eff`` and repaired to be PSD.
    """
    groups = [(k, np.atleast_2d(np.asarray(g, dtype=np.float64))) for k, g in groups if len(g)]
    d = len(names)
    if not groups:
        raise StatisticsError("no samples to fit")
    means = np.array([g.mean(axis=0) for _, g in groups])
    sizes = np.array([len(g) for _, g in groups])
    multi = [(k, g) for k, g in groups if len(g) >= 2]
    sds = np.array([g.std(axis=0, ddof=1) for _, g in multi]).reshape(-1, d)
    defaulted = {}

    mu_mean = means.mean(axis=0)
    if len(groups) >= 2:
        between = means.var(axis=0)
        noise = np.mean([(g.var(axis=0, ddof=1) / len(g)) if len(g) >= 2 else np.zeros(d) for _, g in groups], axis=0)
        mu_sd = np.sqrt(np.maximum(between - noise, 0.0))
        defaulted["global_mu_sd"] = False
    else:
        mu_sd = np.zeros(d)
        defaulted["global_mu_sd"] = True

    logs = {}
    for (k, _), m in zip(groups, means):
        logs.setdefault(k, []).append(m)
    if len(logs) >= 2:
        log_means = np.array([np.mean(v, axis=0) for v in logs.values()])
        within_log = [np.var(v, axis=0) for v in logs.values() if len(v) >= 2]
        per_log = np.mean([len(v) for v in logs.values()])
        spread = np.mean(within_log, axis=0) if within_log else np.zeros(d)
        log_sd = np.sqrt(np.clip(log_means.var(axis=0) - spread / per_log, 0.0, mu_sd ** 2))
        defaulted["log_mu_sd"] = False
    else:
        log_sd = np.zeros(d)
        defaulted["log_mu_sd"] = True

    if len(sds) >= 1:
        sigma_mean = sds.mean(axis=0)
        sigma_sd = sds.std(axis=0) if len(sds) >= 2 else np.zeros(d)
        defaulted["global_sigma_mean"] = False
        defaulted["global_sigma_sd"] = len(sds) < 2
    elif default is not None:
        sigma_mean, sigma_sd = default.global_sigma_mean.copy(), default.global_sigma_sd.copy()
        defaulted["global_sigma_mean"] = defaulted["global_sigma_sd"] = True
    else:
        sigma_mean, sigma_sd = np.zeros(d), np.zeros(d)
        defaulted["global_sigma_mean"] = defaulted["global_sigma_sd"] = True

    zs = []
    for _, g in multi:
        s = g.std(axis=0, ddof=1)
        z = np.where(s > 0, (g - g.mean(axis=0)) / np.where(s > 0, s, 1.0), 0.0)
        zs.append(z)
    n_eff = int(sum(len(z) for z in zs) - len(zs))
    if n_eff >= 1:
        Z = np.concatenate(zs)
        C = Z.T @ Z
        dg = np.sqrt(np.diag(C))
        with np.errstate(invalid="ignore", divide="ignore"):
            P = np.where(np.outer(dg, dg) > 0, C / np.outer(dg, dg), 0.0)
        np.fill_diagonal(P, 1.0)
        if shrink:
            w = 1.0 / n_eff
            P = (1.0 - w) * P + w * np.eye(d)
        P = repair_correlation(P)
        defaulted["correlation"] = False
    else:
        P = default.correlation.copy() if default is not None else np.eye(d)
        defaulted["correlation"] = True

    counts = {"logs": len(logs), "clusters": len(groups), "samples": int(sizes.sum()), "n_eff": max(n_eff, 0)}
    return HierarchicalGaussian(tuple(names), mu_mean, mu_sd, sigma_mean, sigma_sd, P, log_sd,
                                counts, defaulted)


# ---------------------------------------------------------------------------
# model statistics


@dataclass
class ThicknessStats:
    line: MVNStat                 # (slope a, radius at the log start)
    bump_alpha: NormalStat
    bump_beta: NormalStat
    bump_gamma: NormalStat


@dataclass
class WhorlStats:
    log_spacing: NormalStat       # log of inter-cluster spacing in mm
    knots_per_cluster: dict       # count -> probability

    def sample_count(self, rng):
        ks = np.array(sorted(self.knots_per_cluster), dtype=np.int64)
        p = np.array([self.knots_per_cluster[k] for k in ks], dtype=np.float64)
        return int(rng.choice(ks, p=p / p.sum()))

    def sample_spacing(self, rng):
        return float(np.exp(self.log_spacing.sample(rng)))


@dataclass
class ModelStatistics:
    knot_params: HierarchicalGaussian
    surface_knot_mvn: MVNStat     # over logit alpha_theta, logit alpha_l, log(m - 1), amplitude
    centerline_mvn: MVNStat       # over (coeffs_y, coeffs_z)
    base_shape_mean: np.ndarray
    base_shape_sd: np.ndarray
    thickness: ThicknessStats
    whorls: WhorlStats
    length_range: tuple = (2000.0, 4000.0)
    radius_range: tuple = (80.0, 200.0)
    base_shape_count: int = 0
    base_shape_defaulted: bool = False
    model_count: int = 0

    def __post_init__(self):
        self.base_shape_mean = np.asarray(self.base_shape_mean, dtype=np.float64)
        self.base_shape_sd = np.asarray(self.base_shape_sd, dtype=np.float64)
        self.length_range = tuple(float(v) for v in self.length_range)
        self.radius_range = tuple(float(v) for v in self.radius_range)

    @property
    def centerline_terms(self):
        return self.centerline_mvn.mean.size // 2

    def validate(self):
        self.knot_params.validate()
        for name, mvn in (("surface_knot_mvn", self.surface_knot_mvn), ("centerline_mvn", self.centerline_mvn),
                          ("thickness.line", self.thickness.line)):
            if not np.all(np.isfinite(mvn.mean)) or not np.all(np.isfinite(mvn.cov)):
                raise StatisticsError(f"{name} has non-finite entries")
            if np.linalg.eigvalsh(0.5 * (mvn.cov + mvn.cov.T)).min() < -1e-9 * max(1.0, np.abs(mvn.cov).max()):
                raise StatisticsError(f"{name} covariance is not positive semi-definite")
        if self.base_shape_mean.shape != self.base_shape_sd.shape or np.any(self.base_shape_sd < 0):
            raise StatisticsError("base shape statistics must have matching shapes and sd >= 0")
        if not self.whorls.knots_per_cluster or any(p < 0 for p in self.whorls.knots_per_cluster.values()):
            raise StatisticsError("knots_per_cluster must be a non-empty distribution")
        if not 0 < self.length_range[0] <= self.length_range[1]:
            raise StatisticsError("length_range must be positive and ordered")
        return self


def knot_vector(params: KnotParams, delta_l: float, cluster_center: float):
    """Natural knot vector in ``KNOT_DIMS`` order (mean incline appended)."""
    tau = float(np.arctan2(abs(delta_l), params.rho_max))
    return np.array([params.s0, params.l0 - cluster_center, params.gamma, params.rho_max, params.phi0,
                     params.phi1, params.r_max, params.psi0, params.psi1, tau])


def reference_statistics(n_centerline: int = 5, m_cheb: int = 10, n_fourier: int = 10) -> ModelStatistics:
    """Hand-set prior statistics for a mid-sized conifer log (every field flagged as defaulted)."""
    mu = knot_to_stat_space([[0.0, 0.0, 1.1, 130.0, 0.5, 0.4, 12.0, 0.5, 0.5, 0.5]])[0]
    mu_sd = np.array([0.5, 3.0, 0.08, 0.1, 0.4, 0.4, 0.2, 0.4, 0.4, 0.3])
    sig = np.array([1.0, 8.0, 0.06, 0.05, 0.3, 0.3, 0.15, 0.3, 0.3, 0.2])
    P = np.eye(len(KNOT_DIMS))
    P[3, 6] = P[6, 3] = 0.3
    P[5, 9] = P[9, 5] = -0.2
    flags = {k: True for k in ("global_mu_sd", "log_mu_sd", "global_sigma_mean", "global_sigma_sd", "correlation")}
    knots = HierarchicalGaussian(KNOT_DIMS, mu, mu_sd, sig, 0.25 * sig, P, 0.5 * mu_sd, {}, flags)
    sk_mean = surface_knot_to_stat_space([[0.5, 0.5, 2.0, 1.5]])[0]
    sk = MVNStat(sk_mean, np.diag([0.3, 0.3, 0.3, 0.5]) ** 2, 0, True)
    cl_sd = np.concatenate([3.0 / (1.0 + np.arange(n_centerline))] * 2)
    cl = MVNStat(np.zeros(2 * n_centerline), np.diag(cl_sd ** 2), 0, True)
    i = np.arange(m_cheb)[:, None]
    harm = ((np.arange(n_fourier) + 1) // 2)[None, :]
    bs_sd = 2.0 / ((1.0 + i) * (1.0 + harm))
    bs_sd[:, 0] = 0.0  # the constant band comes from the thickness profile
    thick = ThicknessStats(MVNStat([-0.005, 150.0], np.diag([0.002, 20.0]) ** 2, 0, True),
                           NormalStat(2.0, 0.8, 0, True), NormalStat(0.0, 10.0, 0, True),
                           NormalStat(50.0, 10.0, 0, True))
    whorls = WhorlStats(NormalStat(float(np.log(400.0)), 0.25, 0, True), {3: 0.25, 4: 0.35, 5: 0.25, 6: 0.15})
    return ModelStatistics(knots, sk, cl, np.zeros((m_cheb, n_fourier)), bs_sd, thick, whorls,
                           (2000.0, 4000.0), (100.0, 200.0), 0, True, 0)


def fit_statistics(models, shrink: bool = True) -> ModelStatistics:
    """Estimate ModelStatistics from fitted LogModels; thin fields fall back to the reference prior.

    Moments across logs, surface knots and whorls are population (ddof=0)
    estimates, so repeating the input list changes only the sample counts.
    """
    models = list(models)
    if not models:
        raise StatisticsError("fit_statistics needs at least one model")
    n_cl = models[0].centerline.n
    m_cheb, n_fourier = models[0].base_shape.coeffs.shape
    ref = reference_statistics(n_cl, m_cheb, n_fourier)
    for m in models:
        if m.centerline.n != n_cl or m.base_shape.coeffs.shape != (m_cheb, n_fourier):
            raise StatisticsError("models disagree on centerline terms or base-shape size")

    groups, spacings, counts = [], [], []
    for li, m in enumerate(models):
        by_cluster = {}
        for k in m.knots:
            by_cluster.setdefault(k.cluster_id, []).append(k)
        centers = []
        for cid in sorted(by_cluster, key=lambda c: str(c)):
            ks = by_cluster[cid]
            center = float(np.mean([k.params.l0 for k in ks]))
            centers.append(center)
            rows = np.array([knot_vector(k.params, k.delta_l, center) for k in ks])
            groups.append((li, knot_to_stat_space(rows)))
            counts.append(len(ks))
        centers = np.sort(centers)
        spacings.extend(np.diff(centers).tolist())
    if groups:
        knots = fit_hierarchical(groups, KNOT_DIMS, shrink=shrink, default=ref.knot_params)
    else:
        knots = ref.knot_params

    sk_rows = []
    for m in models:
        skip = set(m.metadata.get("unreliable_surface_knots", ()))
        ids = [k.knot_id for k in m.knots] if len(m.knots) == len(m.surface_knots) else [None] * len(m.surface_knots)
        sk_rows += [[s.alpha_theta, s.alpha_l, s.m, s.amplitude] for s, kid in zip(m.surface_knots, ids)
                    if s.amplitude != 0.0 and kid not in skip]
    sk = _mvn_from_samples(surface_knot_to_stat_space(sk_rows) if sk_rows else np.zeros((0, 4)),
                           ref.surface_knot_mvn)
    cl = _mvn_from_samples([np.concatenate([m.centerline.coeffs_y, m.centerline.coeffs_z]) for m in models],
                           ref.centerline_mvn)

    bs = np.array([m.base_shape.coeffs for m in models])
    bs_mean = bs.mean(axis=0)
    bs_sd = bs.std(axis=0, ddof=0) if len(models) >= 2 else ref.base_shape_sd.copy()

    lines = [[m.thickness.a, m.thickness.a * m.l_min + m.thickness.b] for m in models]
    bumps = [c for m in models for c in m.thickness.clusters]

    def normal(vals, default):
        vals = np.asarray(vals, dtype=np.float64)
        if vals.size >= 2:
            return NormalStat(float(vals.mean()), float(vals.std(ddof=0)), int(vals.size), False)
        if vals.size == 1:
            return NormalStat(float(vals[0]), default.sd, 1, True)
        return NormalStat(default.mean, default.sd, 0, True)

    thick = ThicknessStats(_mvn_from_samples(lines, ref.thickness.line),
                           normal([c.alpha for c in bumps], ref.thickness.bump_alpha),
                           normal([c.beta for c in bumps], ref.thickness.bump_beta),
                           normal([c.gamma for c in bumps], ref.thickness.bump_gamma))
    sp = np.asarray(spacings)
    log_sp = normal(np.log(sp[sp > 0]), ref.whorls.log_spacing)
    if counts:
        vals, freq = np.unique(counts, return_counts=True)
        kpc = {int(v): float(f) / len(counts) for v, f in zip(vals, freq)}
    else:
        kpc = dict(ref.whorls.knots_per_cluster)
    lengths = [m.l_max - m.l_min for m in models]
    radii = [float(np.mean(eval_base_radius(m))) for m in models]
    return ModelStatistics(knots, sk, cl, bs_mean, bs_sd, thick, WhorlStats(log_sp, kpc),
                           (min(lengths), max(lengths)), (min(radii), max(radii)), len(models),
                           len(models) < 2, len(models)).validate()


def eval_base_radius(model, samples: int = 33):
    """Circumferential mean base radius at evenly spaced heights."""
    l = np.linspace(model.l_min, model.l_max, samples)
    if model.thickness_band:
        return eval_thickness(model.thickness, l)
    return model.base_shape.row_coefficients(l)[:, 0]


def sample_knot_hierarchy(stats, rng, n_clusters: int, knots_per_cluster, log_level: bool = True):
    """Nested natural-space knot vectors (``KNOT_DIMS`` order), one (k, 10) array per cluster.

    ``stats`` may be a ModelStatistics or a HierarchicalGaussian.
    """
    hg = stats.knot_params if isinstance(stats, ModelStatistics) else stats
    if np.isscalar(knots_per_cluster):
        knots_per_cluster = [int(knots_per_cluster)] * n_clusters
    if len(knots_per_cluster) != n_clusters:
        raise StatisticsError("knots_per_cluster must have one entry per cluster")
    log_mean = hg.sample_log_mean(rng) if log_level else None
    out = []
    for n in knots_per_cluster:
        mu, sigma = hg.sample_cluster(rng, log_mean)
        y = hg.sample_members(mu, sigma, int(n), rng) if n > 0 else np.zeros((0, hg.dimension))
        out.append(knot_from_stat_space(y) if n > 0 else np.zeros((0, hg.dimension)))
    return out
