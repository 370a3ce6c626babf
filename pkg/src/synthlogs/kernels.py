"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names (``nearest_station``, ``gabor_splat``, ``fill_holes``)
dispatch to numba when it is importable and not disabled through
``SYNTHLOGS_DISABLE_NUMBA``. Both variants are always importable under the
``*_numba`` / ``*_numpy`` names so tests and benchmarks can compare them.
"""

import math

import numpy as np

from ._accel import HAS_NUMBA, njit

# ---------------------------------------------------------------------------
# nearest axis station


@njit
def _nearest_station_jit(points, stations):
    n = points.shape[0]
    m = stations.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        arg = 0
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        for j in range(m):
            dx = px - stations[j, 0]
            dy = py - stations[j, 1]
            dz = pz - stations[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
                arg = j
        out[i] = arg
    return out


def nearest_station_numpy(points, stations, chunk=4096):
    points = np.asarray(points, dtype=np.float64)
    stations = np.asarray(stations, dtype=np.float64)
    out = np.empty(len(points), dtype=np.int64)
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        d = ((p[:, None, :] - stations[None, :, :]) ** 2).sum(axis=2)
        out[start:start + chunk] = np.argmin(d, axis=1)
    return out


def nearest_station_numba(points, stations):
    return _nearest_station_jit(np.ascontiguousarray(points, dtype=np.float64),
                                np.ascontiguousarray(stations, dtype=np.float64))


# ---------------------------------------------------------------------------
# sparse Gabor convolution


@njit
def _gabor_splat_jit(n_l, n_theta, dx, dy, px, py, w, freq, bandwidth, radius):
    out = np.zeros((n_l, n_theta))
    circ = n_theta * dx
    ri = int(math.ceil(radius / dy)) + 1
    rj = int(math.ceil(radius / dx)) + 1
    inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth)
    k = 2.0 * math.pi * freq
    r2max = radius * radius
    for q in range(px.shape[0]):
        x0 = px[q]
        y0 = py[q]
        ic = int(math.floor(y0 / dy - 0.5))
        jc = int(math.floor(x0 / dx))
        for i in range(ic - ri, ic + ri + 2):
            if i < 0 or i >= n_l:
                continue
            ddy = (i + 0.5) * dy - y0
            for j in range(jc - rj, jc + rj + 2):
                ddx = j * dx - x0
                # minimal image across the theta seam
                ddx -= circ * math.floor(ddx / circ + 0.5)
                r2 = ddx * ddx + ddy * ddy
                if r2 > r2max:
                    continue
                jj = j % n_theta
                out[i, jj] += w[q] * math.exp(-r2 * inv2b2) * math.cos(k * ddx)
    return out


def gabor_splat_numpy(n_l, n_theta, dx, dy, px, py, w, freq, bandwidth, radius):
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    circ = n_theta * dx
    ri = int(math.ceil(radius / dy)) + 1
    rj = int(math.ceil(radius / dx)) + 1
    ic = np.floor(py / dy - 0.5).astype(np.int64)
    jc = np.floor(px / dx).astype(np.int64)
    k = 2.0 * math.pi * freq
    acc = np.zeros(n_l * n_theta)
    for di in range(-ri, ri + 2):
        i = ic + di
        ddy = (i + 0.5) * dy - py
        inside = (i >= 0) & (i < n_l)
        for dj in range(-rj, rj + 2):
            j = jc + dj
            ddx = j * dx - px
            ddx = ddx - circ * np.floor(ddx / circ + 0.5)
            r2 = ddx * ddx + ddy * ddy
            sel = inside & (r2 <= radius * radius)
            if not sel.any():
                continue
            val = w[sel] * np.exp(-r2[sel] / (2.0 * bandwidth * bandwidth)) * np.cos(k * ddx[sel])
            flat = i[sel] * n_theta + (j[sel] % n_theta)
            acc += np.bincount(flat, weights=val, minlength=n_l * n_theta)
    return acc.reshape(n_l, n_theta)


def gabor_splat_numba(n_l, n_theta, dx, dy, px, py, w, freq, bandwidth, radius):
    return _gabor_splat_jit(int(n_l), int(n_theta), float(dx), float(dy),
                            np.ascontiguousarray(px, dtype=np.float64),
                            np.ascontiguousarray(py, dtype=np.float64),
                            np.ascontiguousarray(w, dtype=np.float64),
                            float(freq), float(bandwidth), float(radius))


# ---------------------------------------------------------------------------
# hole filling on a theta-cyclic grid (Jacobi iteration, both backends)


@njit
def _fill_holes_jit(values, valid, tol, max_iter):
    n_l, n_t = values.shape
    cur = values.copy()
    nxt = values.copy()
    it = 0
    for it in range(max_iter):
        delta = 0.0
        for i in range(n_l):
            for j in range(n_t):
                if valid[i, j]:
                    continue
                s = cur[i, (j - 1) % n_t] + cur[i, (j + 1) % n_t]
                c = 2.0
                if i > 0:
                    s += cur[i - 1, j]
                    c += 1.0
                if i < n_l - 1:
                    s += cur[i + 1, j]
                    c += 1.0
                v = s / c
                d = abs(v - cur[i, j])
                if d > delta:
                    delta = d
                nxt[i, j] = v
        for i in range(n_l):
            for j in range(n_t):
                cur[i, j] = nxt[i, j]
        if delta < tol:
            break
    return cur, it + 1


def fill_holes_numpy(values, valid, tol=1e-6, max_iter=20000):
    cur = np.array(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    holes = ~valid
    n_l = cur.shape[0]
    count = np.full(cur.shape, 2.0)
    count[1:] += 1.0
    count[:-1] += 1.0
    it = 0
    for it in range(max_iter):
        s = np.roll(cur, 1, axis=1) + np.roll(cur, -1, axis=1)
        if n_l > 1:
            s[1:] += cur[:-1]
            s[:-1] += cur[1:]
        new = s / count
        delta = np.abs(new[holes] - cur[holes]).max() if holes.any() else 0.0
        cur[holes] = new[holes]
        if delta < tol:
            break
    return cur, it + 1


def fill_holes_numba(values, valid, tol=1e-6, max_iter=20000):
    return _fill_holes_jit(np.ascontiguousarray(values, dtype=np.float64),
                           np.ascontiguousarray(valid, dtype=np.bool_),
                           float(tol), int(max_iter))


if HAS_NUMBA:
    nearest_station = nearest_station_numba
    gabor_splat = gabor_splat_numba
    fill_holes = fill_holes_numba
else:
    nearest_station = nearest_station_numpy
    gabor_splat = gabor_splat_numpy
    fill_holes = fill_holes_numpy
