import os
import subprocess
import sys

import numpy as np
import pytest

from synthlogs import kernels
from synthlogs._accel import HAS_NUMBA


def test_nearest_station_backends_agree(rng):
    pts = rng.normal(size=(3000, 3)) * 30
    st = np.cumsum(rng.normal(size=(200, 3)), axis=0)
    a = kernels.nearest_station_numpy(pts, st, chunk=512)
    b = kernels.nearest_station_numba(pts, st)
    np.testing.assert_array_equal(a, b)
    brute = np.argmin(((pts[:, None] - st[None]) ** 2).sum(-1), axis=1)
    np.testing.assert_array_equal(a, brute)


def test_gabor_splat_backends_agree(rng):
    n_l, n_t, dx, dy = 60, 64, 2.0, 3.0
    n = 400
    px, py = rng.uniform(0, n_t * dx, n), rng.uniform(-10, n_l * dy + 10, n)
    w = rng.choice([-1.0, 1.0], n)
    args = (n_l, n_t, dx, dy, px, py, w, 0.15, 4.0, 12.0)
    a, b = kernels.gabor_splat_numpy(*args), kernels.gabor_splat_numba(*args)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_gabor_single_impulse_direct_sum():
    # one impulse next to the seam, checked against a brute-force sum over all cells
    n_l, n_t, dx, dy = 20, 32, 1.0, 1.0
    out = kernels.gabor_splat_numpy(n_l, n_t, dx, dy, [0.3], [10.2], [1.0], 0.2, 2.0, 6.0)
    i, j = np.meshgrid(np.arange(n_l), np.arange(n_t), indexing="ij")
    ddx = j * dx - 0.3
    ddx -= n_t * dx * np.floor(ddx / (n_t * dx) + 0.5)
    ddy = (i + 0.5) * dy - 10.2
    r2 = ddx ** 2 + ddy ** 2
    ref = np.where(r2 <= 36.0, np.exp(-r2 / 8.0) * np.cos(2 * np.pi * 0.2 * ddx), 0.0)
    np.testing.assert_allclose(out, ref, atol=1e-14)


def test_fill_holes_backends_agree(rng):
    values = 100 + rng.normal(size=(40, 48))
    valid = rng.random((40, 48)) < 0.6
    values[~valid] = values[valid].mean()
    (a, ia), (b, ib) = kernels.fill_holes_numpy(values, valid, 1e-10), kernels.fill_holes_numba(values, valid, 1e-10)
    assert ia == ib
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_array_equal(a[valid], values[valid])


def test_fill_holes_is_harmonic():
    values = np.tile(np.linspace(0.0, 10.0, 11)[:, None], (1, 8))
    valid = np.ones_like(values, dtype=bool)
    valid[3:8] = False
    filled, _ = kernels.fill_holes_numpy(np.where(valid, values, 0.0), valid, 1e-13)
    np.testing.assert_allclose(filled, values, atol=1e-9)


@pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")
def test_disable_switch_selects_numpy_and_matches(tmp_path):
    code = ("import numpy as np; from synthlogs._accel import backend; "
            "from synthlogs.stats import reference_statistics; "
            "from synthlogs.synth import GenerationConfig, generate_log; "
            "g = generate_log(reference_statistics(), GenerationConfig(seed=4, log_length=700.0)); "
            "print(backend()); np.save(__import__('sys').argv[1], g.heightmap.values)")
    out = {}
    for flag in ("0", "1"):
        path = str(tmp_path / f"h{flag}.npy")
        res = subprocess.run([sys.executable, "-c", code, path], env=dict(os.environ, SYNTHLOGS_DISABLE_NUMBA=flag),
                             capture_output=True, text=True, check=True)
        out[res.stdout.strip()] = np.load(path)
    assert set(out) == {"numba", "numpy"}
    np.testing.assert_allclose(out["numba"], out["numpy"], atol=1e-9)
