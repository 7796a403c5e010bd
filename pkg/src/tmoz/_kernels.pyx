# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled bilateral kernel. Semantics mirror tmoz._kernels_py exactly."""
import numpy as np

from libc.math cimport exp


def bilateral_rows(const double[:, ::1] src, double[:, ::1] dst,
                   double sigma_s, double sigma_r, Py_ssize_t radius,
                   Py_ssize_t row_start, Py_ssize_t row_stop):
    """Filter rows [row_start, row_stop) of ``src`` into the same rows of ``dst``.

    Square window of half-width ``radius``; weights are renormalised over the
    in-bounds part of the window.
    """
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef Py_ssize_t side = 2 * radius + 1
    cdef double[:, ::1] spatial = np.empty((side, side), dtype=np.float64)
    cdef Py_ssize_t y, x, dy, dx, yy, xx
    cdef double inv_s = 1.0 / (2.0 * sigma_s * sigma_s)
    cdef double inv_r = 1.0 / (2.0 * sigma_r * sigma_r)
    cdef double centre, v, d, wgt, num, den
    cdef Py_ssize_t y0, y1, x0, x1, i, n
    cdef const double *srow
    cdef const double *wrow

    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            spatial[dy + radius, dx + radius] = exp(-(dy * dy + dx * dx) * inv_s)

    with nogil:
        for y in range(row_start, row_stop):
            y0 = y - radius if y >= radius else 0
            y1 = y + radius + 1 if y + radius + 1 <= h else h
            for x in range(w):
                x0 = x - radius if x >= radius else 0
                x1 = x + radius + 1 if x + radius + 1 <= w else w
                centre = src[y, x]
                num = 0.0
                den = 0.0
                n = x1 - x0
                for yy in range(y0, y1):
                    srow = &src[yy, x0]
                    wrow = &spatial[yy - y + radius, x0 - x + radius]
                    for i in range(n):
                        v = srow[i]
                        d = v - centre
                        wgt = wrow[i] * exp(-d * d * inv_r)
                        num += wgt * v
                        den += wgt
                dst[y, x] = num / den
