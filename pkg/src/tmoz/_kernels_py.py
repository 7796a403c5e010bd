"""Numpy fallback for the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def bilateral_rows(src, dst, sigma_s, sigma_r, radius, row_start, row_stop):
    h, w = src.shape
    centre = src[row_start:row_stop]
    num = np.zeros_like(centre)
    den = np.zeros_like(centre)
    inv_s = 1.0 / (2.0 * sigma_s * sigma_s)
    inv_r = 1.0 / (2.0 * sigma_r * sigma_r)
    for dy in range(-radius, radius + 1):
        # output rows whose neighbour row y+dy is in bounds
        y0 = max(row_start, -dy)
        y1 = min(row_stop, h - dy)
        if y0 >= y1:
            continue
        for dx in range(-radius, radius + 1):
            x0 = max(0, -dx)
            x1 = min(w, w - dx)
            if x0 >= x1:
                continue
            v = src[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            c = centre[y0 - row_start:y1 - row_start, x0:x1]
            d = v - c
            wgt = np.exp(-(dy * dy + dx * dx) * inv_s) * np.exp(-d * d * inv_r)
            num[y0 - row_start:y1 - row_start, x0:x1] += wgt * v
            den[y0 - row_start:y1 - row_start, x0:x1] += wgt
    dst[row_start:row_stop] = num / den
