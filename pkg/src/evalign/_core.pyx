# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures and accumulation order match ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def voxel_deposit(tb, x, y, p, Py_ssize_t nbins, Py_ssize_t height, Py_ssize_t width):
    cdef const double[::1] tb_v = np.ascontiguousarray(tb, dtype=np.float64)
    cdef const long long[::1] x_v = np.ascontiguousarray(x, dtype=np.int64)
    cdef const long long[::1] y_v = np.ascontiguousarray(y, dtype=np.int64)
    cdef const double[::1] p_v = np.ascontiguousarray(p, dtype=np.float64)
    out = np.zeros(nbins * height * width, dtype=np.float64)
    cdef double[::1] g = out
    cdef Py_ssize_t n = tb_v.shape[0], k, plane = height * width, pix
    cdef long long b0
    cdef double t, fb, w1, w0
    for k in range(n):
        t = tb_v[k]
        fb = floor(t)
        w1 = t - fb
        w0 = 1.0 - w1
        b0 = <long long>fb
        pix = y_v[k] * width + x_v[k]
        if 0 <= b0 < nbins:
            g[b0 * plane + pix] += p_v[k] * w0
        if 0 <= b0 + 1 < nbins:
            g[(b0 + 1) * plane + pix] += p_v[k] * w1
    return out.reshape(nbins, height, width)


def splat(xw, yw, vals, Py_ssize_t height, Py_ssize_t width):
    cdef const double[::1] xv = np.ascontiguousarray(xw, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(yw, dtype=np.float64)
    cdef const double[::1] vv = np.ascontiguousarray(vals, dtype=np.float64)
    out = np.zeros(height * width, dtype=np.float64)
    cdef double[::1] img = out
    cdef Py_ssize_t n = xv.shape[0], k
    cdef long long x0, y0
    cdef double fx, fy, gx, gy, v, fxf, fyf
    for k in range(n):
        fxf = floor(xv[k])
        fyf = floor(yv[k])
        fx = xv[k] - fxf
        fy = yv[k] - fyf
        gx = 1.0 - fx
        gy = 1.0 - fy
        x0 = <long long>fxf
        y0 = <long long>fyf
        v = vv[k]
        if 0 <= y0 < height:
            if 0 <= x0 < width:
                img[y0 * width + x0] += v * (gx * gy)
            if 0 <= x0 + 1 < width:
                img[y0 * width + x0 + 1] += v * (fx * gy)
        if 0 <= y0 + 1 < height:
            if 0 <= x0 < width:
                img[(y0 + 1) * width + x0] += v * (gx * fy)
            if 0 <= x0 + 1 < width:
                img[(y0 + 1) * width + x0 + 1] += v * (fx * fy)
    return out.reshape(height, width)


def splat_grad(xw, yw, coef, ga, gb):
    cdef const double[::1] xv = np.ascontiguousarray(xw, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(yw, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(coef, dtype=np.float64)
    cdef Py_ssize_t height = ga.shape[0], width = ga.shape[1]
    cdef const double[::1] a = np.ascontiguousarray(ga, dtype=np.float64).ravel()
    cdef const double[::1] b = np.ascontiguousarray(gb, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0], k, q
    dx_out = np.zeros(n, dtype=np.float64)
    dy_out = np.zeros(n, dtype=np.float64)
    cdef double[::1] dx = dx_out
    cdef double[::1] dy = dy_out
    cdef long long x0, y0
    cdef double fx, fy, gx, gy, fxf, fyf, s0, s1, s2, s3, c
    for k in range(n):
        fxf = floor(xv[k])
        fyf = floor(yv[k])
        fx = xv[k] - fxf
        fy = yv[k] - fyf
        gx = 1.0 - fx
        gy = 1.0 - fy
        x0 = <long long>fxf
        y0 = <long long>fyf
        c = cv[k]
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        s3 = 0.0
        if 0 <= y0 < height:
            if 0 <= x0 < width:
                q = y0 * width + x0
                s0 = a[q] * c + b[q]
            if 0 <= x0 + 1 < width:
                q = y0 * width + x0 + 1
                s1 = a[q] * c + b[q]
        if 0 <= y0 + 1 < height:
            if 0 <= x0 < width:
                q = (y0 + 1) * width + x0
                s2 = a[q] * c + b[q]
            if 0 <= x0 + 1 < width:
                q = (y0 + 1) * width + x0 + 1
                s3 = a[q] * c + b[q]
        dx[k] = (((0.0 - gy * s0) + gy * s1) - fy * s2) + fy * s3
        dy[k] = (((0.0 - gx * s0) - fx * s1) + gx * s2) + fx * s3
    return dx_out, dy_out


def scan_diag(abar, bx, cmat, h0):
    cdef const double[:, :, ::1] av = np.ascontiguousarray(abar, dtype=np.float64)
    cdef const double[:, :, ::1] bv = np.ascontiguousarray(bx, dtype=np.float64)
    cdef const double[:, ::1] cm = np.ascontiguousarray(cmat, dtype=np.float64)
    h_out = np.array(h0, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] h = h_out
    cdef Py_ssize_t length = av.shape[0], nch = av.shape[1], nst = av.shape[2]
    y_out = np.empty((length, nch), dtype=np.float64)
    cdef double[:, ::1] y = y_out
    cdef Py_ssize_t t, c, n
    cdef double acc
    for t in range(length):
        for c in range(nch):
            acc = 0.0
            for n in range(nst):
                h[c, n] = av[t, c, n] * h[c, n] + bv[t, c, n]
                acc = acc + cm[c, n] * h[c, n]
            y[t, c] = acc
    return y_out, h_out
