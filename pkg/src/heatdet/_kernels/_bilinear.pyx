# cython: language_level=3
"""Compiled bilinear sampling: one pass over (sample, channel) pairs."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline void _setup(double xv, double yv, Py_ssize_t h, Py_ssize_t w,
                        Py_ssize_t* i00, Py_ssize_t* i01, Py_ssize_t* i10, Py_ssize_t* i11,
                        double* wx, double* wy) noexcept nogil:
    cdef double xc = xv
    cdef double yc = yv
    cdef Py_ssize_t x0, y0, x1, y1
    if xc < 0.0:
        xc = 0.0
    elif xc > w - 1.0:
        xc = w - 1.0
    if yc < 0.0:
        yc = 0.0
    elif yc > h - 1.0:
        yc = h - 1.0
    x0 = <Py_ssize_t>floor(xc)
    y0 = <Py_ssize_t>floor(yc)
    if x0 > w - 2:
        x0 = w - 2 if w >= 2 else 0
    if y0 > h - 2:
        y0 = h - 2 if h >= 2 else 0
    x1 = x0 + 1 if x0 + 1 < w else w - 1
    y1 = y0 + 1 if y0 + 1 < h else h - 1
    wx[0] = xc - x0
    wy[0] = yc - y0
    i00[0] = y0 * w + x0
    i01[0] = y0 * w + x1
    i10[0] = y1 * w + x0
    i11[0] = y1 * w + x1


def bilinear_forward(double[:, :, :, ::1] value, double[:, ::1] x, double[:, ::1] y):
    cdef Py_ssize_t n = value.shape[0], c = value.shape[1]
    cdef Py_ssize_t h = value.shape[2], w = value.shape[3], p = x.shape[1]
    out_arr = np.empty((n, c, p), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef const double* plane
    cdef Py_ssize_t b, k, ch, i00, i01, i10, i11
    cdef double wx, wy, a, bb, cc, d
    with nogil:
        for b in range(n):
            for k in range(p):
                _setup(x[b, k], y[b, k], h, w, &i00, &i01, &i10, &i11, &wx, &wy)
                a = (1 - wx) * (1 - wy)
                bb = wx * (1 - wy)
                cc = (1 - wx) * wy
                d = wx * wy
                for ch in range(c):
                    plane = &value[b, ch, 0, 0]
                    out[b, ch, k] = a * plane[i00] + bb * plane[i01] + cc * plane[i10] + d * plane[i11]
    return out_arr


def bilinear_backward(double[:, :, ::1] grad_out, double[:, :, :, ::1] value,
                      double[:, ::1] x, double[:, ::1] y):
    cdef Py_ssize_t n = value.shape[0], c = value.shape[1]
    cdef Py_ssize_t h = value.shape[2], w = value.shape[3], p = x.shape[1]
    gv_arr = np.zeros((n, c, h, w), dtype=np.float64)
    gx_arr = np.zeros((n, p), dtype=np.float64)
    gy_arr = np.zeros((n, p), dtype=np.float64)
    cdef double[:, :, :, ::1] gv = gv_arr
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    cdef const double* plane
    cdef double* gplane
    cdef Py_ssize_t b, k, ch, i00, i01, i10, i11
    cdef double wx, wy, g, sx, sy, f00, f01, f10, f11
    cdef bint in_x, in_y
    with nogil:
        for b in range(n):
            for k in range(p):
                _setup(x[b, k], y[b, k], h, w, &i00, &i01, &i10, &i11, &wx, &wy)
                in_x = x[b, k] > 0 and x[b, k] < w - 1
                in_y = y[b, k] > 0 and y[b, k] < h - 1
                sx = 0.0
                sy = 0.0
                for ch in range(c):
                    g = grad_out[b, ch, k]
                    plane = &value[b, ch, 0, 0]
                    gplane = &gv[b, ch, 0, 0]
                    gplane[i00] += g * (1 - wx) * (1 - wy)
                    gplane[i01] += g * wx * (1 - wy)
                    gplane[i10] += g * (1 - wx) * wy
                    gplane[i11] += g * wx * wy
                    f00 = plane[i00]
                    f01 = plane[i01]
                    f10 = plane[i10]
                    f11 = plane[i11]
                    sx += g * ((1 - wy) * (f01 - f00) + wy * (f11 - f10))
                    sy += g * ((1 - wx) * (f10 - f00) + wx * (f11 - f01))
                if in_x:
                    gx[b, k] = sx
                if in_y:
                    gy[b, k] = sy
    return gv_arr, gx_arr, gy_arr
