"""Deterministic synthetic HDR scenes with natural-image statistics.

Log luminance is a 1/f random field overlaid with occluding discs
("dead leaves"), which gives both smooth gradients and hard edges. The
field is shaped so that the scene hits a requested key and spans a
requested dynamic range.
"""
from __future__ import annotations

import numpy as np

from tmoz.hdr_io import SRGB_TO_XYZ, HdrImage


def _pink_field(rng, h, w, slope=1.0):
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0
    spec = (rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))) / f ** slope
    spec[0, 0] = 0.0
    field = np.fft.ifft2(spec).real
    return (field - field.mean()) / (field.std() + 1e-300)


def _dead_leaves(rng, h, w, n_discs):
    out = np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_discs):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = max(h, w) * rng.uniform(0.04, 0.25) * rng.uniform(0.3, 1.0)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        out[mask] = rng.normal()
    return out


def _shape_to_mean(u, target, iters=60):
    # u in [0, 1]; find p with mean(u**p) == target
    lo, hi = -12.0, 12.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.mean(u ** np.exp(mid)) > target:
            lo = mid
        else:
            hi = mid
    return u ** np.exp(0.5 * (lo + hi))


def log_luminance_field(h, w, seed=0, n_discs=24):
    """Unit-range field in [0, 1] with natural-image statistics."""
    rng = np.random.default_rng(seed)
    field = 0.6 * _pink_field(rng, h, w) + _dead_leaves(rng, h, w, n_discs)
    field += 0.15 * rng.normal(size=(h, w))
    lo, hi = np.percentile(field, [0.5, 99.5])
    return np.clip((field - lo) / (hi - lo), 0.0, 1.0)


def natural_hdr(size=(64, 64), dynamic_range=1e4, key=None, peak=1.0, saturation=0.25,
                seed=0) -> HdrImage:
    """Linear-sRGB scene spanning ``dynamic_range`` with peak luminance ``peak``.

    ``key`` in (0.045, 0.72) shapes the log-luminance histogram so that the
    exposure-invariant key of the scene lands near that value; None keeps the
    raw field.
    """
    h, w = size
    u = log_luminance_field(h, w, seed)
    if key is not None:
        # key = 0.18 * 4 ** (2 * mean(u) - 1) for a field spanning the full range
        target = 0.5 * (np.log(key / 0.18) / np.log(4.0) + 1.0)
        u = _shape_to_mean(np.clip(u, 1e-12, 1.0), float(np.clip(target, 0.01, 0.99)))
        # the power law lifts the floor off 0; stretch back so the range is exact
        u = (u - u.min()) / (u.max() - u.min())
    log_y = np.log10(peak) - np.log10(dynamic_range) * (1.0 - u)
    Y = 10.0 ** log_y
    rng = np.random.default_rng(seed + 7919)
    tint = np.exp(saturation * np.stack([_pink_field(rng, h, w, 1.5) for _ in range(3)], axis=-1))
    tint /= (tint @ SRGB_TO_XYZ[1])[..., None]
    return HdrImage(Y[..., None] * tint, "rgb")


def exposure_for_key(Y, key: float) -> float:
    """Radiance multiplier that puts the as-printed key of ``Y`` at ``key``.

    That key depends on absolute exposure (the reinhard key does not), so
    scaling moves it while leaving the histogram shape alone.
    """
    from tmoz.tonemap import image_key

    ks = image_key(Y)
    expo = np.log(key / 0.18) / np.log(4.0)
    return float(2.0 ** (0.5 * ks.C_L * (expo + 1.0) - np.log2(ks.G_L)))


def robustness_corpus(n=30, size=(64, 96), dr_range=(1e2, 1e8), key_range=(0.05, 0.85), seed=0):
    """``n`` scenes with dynamic ranges log-spaced over ``dr_range`` and as-printed
    keys spread over ``key_range``; the pairing of the two is shuffled."""
    rng = np.random.default_rng(seed)
    drs = np.geomspace(*dr_range, n)
    keys = np.linspace(*key_range, n)[rng.permutation(n)]
    shapes = rng.uniform(0.06, 0.6, n)
    corpus = []
    for i in range(n):
        img = natural_hdr(size, drs[i], key=shapes[i], seed=seed * 1000 + i,
                          saturation=rng.uniform(0.05, 0.5))
        s = exposure_for_key(img.data @ SRGB_TO_XYZ[1], keys[i])
        corpus.append((HdrImage(img.data * s, "rgb"), float(drs[i]), float(keys[i])))
    return corpus
