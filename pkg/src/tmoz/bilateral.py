"""Base/detail decomposition of log-normalised brightness with a bilateral filter.

Two routes: ``decompose`` evaluates the truncated bilateral sum exactly,
``decompose_fast`` uses a bilateral grid (splat, blur, trilinear slice).
The exact kernel comes from the compiled ``_kernels`` extension when it is
built; otherwise the numpy fallback in ``_kernels_py`` is used. Setting
``TMOZ_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from tmoz import _kernels_py

try:
    from tmoz import _kernels as _kernels_ext
except ImportError:  # extension not built
    _kernels_ext = None

BACKENDS = {"python": _kernels_py}
if _kernels_ext is not None:
    BACKENDS["cython"] = _kernels_ext

DEFAULT_BACKEND = "cython" if "cython" in BACKENDS and not os.environ.get("TMOZ_PURE_PYTHON") else "python"

SIGMA_S_FRAC = 0.02
SIGMA_R = 0.35
FLOOR = 1e-6
TRUNCATE = 3.0


@dataclass
class BrightnessDecomposition:
    Q_max: float
    logQ: np.ndarray
    base: np.ndarray
    detail: np.ndarray
    sigma_s: float
    sigma_r: float


def default_sigma_s(shape, frac: float = SIGMA_S_FRAC) -> float:
    return frac * max(shape[0], shape[1])


def kernel_radius(sigma_s: float) -> int:
    return int(math.ceil(TRUNCATE * sigma_s))


def log_normalise(Q) -> tuple[float, np.ndarray]:
    """Return Q_max and log10(Q / Q_max), flooring Q at 1e-6 * Q_max first."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.size == 0:
        raise ValueError(f"expected a non-empty 2-D brightness map, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ValueError("brightness map contains non-finite values")
    Q_max = float(Q.max())
    if not Q_max > 0:
        raise ValueError("brightness map has no positive values")
    return Q_max, np.log10(np.maximum(Q / Q_max, FLOOR))


def _check_sigmas(sigma_s, sigma_r):
    if not (sigma_s > 0 and sigma_r > 0):
        raise ValueError(f"sigmas must be positive, got sigma_s={sigma_s}, sigma_r={sigma_r}")


def bilateral_filter(img, sigma_s: float, sigma_r: float, workers: int = 1,
                     backend: str | None = None) -> np.ndarray:
    """Exact bilateral filter, spatial kernel truncated at 3 sigma_s, renormalised at borders."""
    _check_sigmas(sigma_s, sigma_r)
    src = np.ascontiguousarray(img, dtype=np.float64)
    dst = np.empty_like(src)
    kern = BACKENDS[backend or DEFAULT_BACKEND]
    radius = kernel_radius(sigma_s)
    h = src.shape[0]
    workers = max(1, min(int(workers), h))
    if workers == 1:
        kern.bilateral_rows(src, dst, sigma_s, sigma_r, radius, 0, h)
        return dst
    bounds = np.linspace(0, h, workers + 1).astype(int)
    with ThreadPoolExecutor(workers) as pool:
        futures = [pool.submit(kern.bilateral_rows, src, dst, sigma_s, sigma_r, radius, a, b)
                   for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        for f in futures:
            f.result()
    return dst


def gaussian_blur(img, sigma_s: float) -> np.ndarray:
    """Truncated Gaussian blur with the same window and border renormalisation as the bilateral path."""
    radius = kernel_radius(sigma_s)
    offs = np.arange(-radius, radius + 1)
    k = np.exp(-offs ** 2 / (2.0 * sigma_s ** 2))
    img = np.asarray(img, dtype=np.float64)
    num = img
    den = np.ones_like(img)
    for axis in (0, 1):
        num = ndimage.convolve1d(num, k, axis=axis, mode="constant")
        den = ndimage.convolve1d(den, k, axis=axis, mode="constant")
    return num / den


def decompose(Q, sigma_s: float | None = None, sigma_r: float = SIGMA_R, workers: int = 1,
              backend: str | None = None) -> BrightnessDecomposition:
    Q_max, logq = log_normalise(Q)
    if sigma_s is None:
        sigma_s = default_sigma_s(logq.shape)
    base = bilateral_filter(logq, sigma_s, sigma_r, workers, backend)
    return BrightnessDecomposition(Q_max, logq, base, logq - base, sigma_s, sigma_r)


# --------------------------------------------------------------------------
# bilateral grid

GRID_SUBDIVISION = 2


def bilateral_grid(img, sigma_s: float, sigma_r: float,
                   subdivision: int = GRID_SUBDIVISION) -> np.ndarray:
    """Bilateral-grid approximation.

    Cells measure ``sigma_s / subdivision`` pixels by ``sigma_r / subdivision``
    range units; ``subdivision=1`` is the classic one-cell-per-sigma grid.
    Trilinear splatting and slicing each add 1/6 cell^2 of variance per
    axis, which the grid blur subtracts out.
    """
    _check_sigmas(sigma_s, sigma_r)
    if subdivision < 1:
        raise ValueError("subdivision must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    lo = float(img.min())
    cell_s = sigma_s / subdivision
    cell_r = sigma_r / subdivision
    sigma_b = math.sqrt(subdivision ** 2 - 1.0 / 3.0)
    blur_r = int(math.ceil(TRUNCATE * sigma_b))
    pad = blur_r + 1
    gy = np.arange(h, dtype=np.float64)[:, None] / cell_s + pad
    gx = np.arange(w, dtype=np.float64)[None, :] / cell_s + pad
    gy, gx = np.broadcast_arrays(gy, gx)
    gz = (img - lo) / cell_r + pad
    shape = (
        int(math.floor((h - 1) / cell_s)) + 2 * pad + 2,
        int(math.floor((w - 1) / cell_s)) + 2 * pad + 2,
        int(math.floor((float(img.max()) - lo) / cell_r)) + 2 * pad + 2,
    )
    coords = [c.ravel() for c in (gy, gx, gz)]
    base_idx = [np.floor(c).astype(np.intp) for c in coords]
    fracs = [c - i for c, i in zip(coords, base_idx)]
    values = img.ravel()
    size = shape[0] * shape[1] * shape[2]
    num = np.zeros(size)
    den = np.zeros(size)
    for cy in (0, 1):
        wy = fracs[0] if cy else 1.0 - fracs[0]
        for cx in (0, 1):
            wx = fracs[1] if cx else 1.0 - fracs[1]
            for cz in (0, 1):
                wz = fracs[2] if cz else 1.0 - fracs[2]
                wgt = wy * wx * wz
                flat = np.ravel_multi_index(
                    (base_idx[0] + cy, base_idx[1] + cx, base_idx[2] + cz), shape)
                num += np.bincount(flat, wgt * values, size)
                den += np.bincount(flat, wgt, size)
    num = num.reshape(shape)
    den = den.reshape(shape)
    offs = np.arange(-blur_r, blur_r + 1)
    k = np.exp(-offs ** 2 / (2.0 * sigma_b ** 2))
    for axis in range(3):
        num = ndimage.convolve1d(num, k, axis=axis, mode="constant")
        den = ndimage.convolve1d(den, k, axis=axis, mode="constant")
    pts = np.stack(coords)
    snum = ndimage.map_coordinates(num, pts, order=1, mode="nearest")
    sden = ndimage.map_coordinates(den, pts, order=1, mode="nearest")
    return (snum / sden).reshape(h, w)


def decompose_fast(Q, sigma_s: float | None = None, sigma_r: float = SIGMA_R,
                   subdivision: int = GRID_SUBDIVISION) -> BrightnessDecomposition:
    Q_max, logq = log_normalise(Q)
    if sigma_s is None:
        sigma_s = default_sigma_s(logq.shape)
    base = bilateral_grid(logq, sigma_s, sigma_r, subdivision)
    return BrightnessDecomposition(Q_max, logq, base, logq - base, sigma_s, sigma_r)
