# cython: language_level=3
"""Compiled interpolation kernels; mirrors ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


cdef inline void _cell(double c, Py_ssize_t n, Py_ssize_t* i0, double* f) noexcept nogil:
    cdef double cc = c
    if cc < 0.0:
        cc = 0.0
    elif cc > n - 1.0:
        cc = n - 1.0
    cdef Py_ssize_t i = <Py_ssize_t>floor(cc)
    if i > n - 2:
        i = n - 2
    i0[0] = i
    f[0] = cc - i


def bilinear_sample(const double[:, ::1] img, c0, c1):
    cdef const double[::1] a0 = np.ascontiguousarray(c0, dtype=np.float64).ravel()
    cdef const double[::1] a1 = np.ascontiguousarray(c1, dtype=np.float64).ravel()
    cdef Py_ssize_t n0 = img.shape[0], n1 = img.shape[1]
    cdef Py_ssize_t m = a0.shape[0], p, i0, j0
    cdef double f0, f1, g0, g1
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for p in range(m):
            _cell(a0[p], n0, &i0, &f0)
            _cell(a1[p], n1, &j0, &f1)
            g0 = 1.0 - f0
            g1 = 1.0 - f1
            o[p] = (g0 * g1 * img[i0, j0] + f0 * g1 * img[i0 + 1, j0]
                    + g0 * f1 * img[i0, j0 + 1] + f0 * f1 * img[i0 + 1, j0 + 1])
    return out.reshape(np.shape(c0))


def bilinear_sample_grad(const double[:, ::1] img, c0, c1):
    cdef const double[::1] a0 = np.ascontiguousarray(c0, dtype=np.float64).ravel()
    cdef const double[::1] a1 = np.ascontiguousarray(c1, dtype=np.float64).ravel()
    cdef Py_ssize_t n0 = img.shape[0], n1 = img.shape[1]
    cdef Py_ssize_t m = a0.shape[0], p, i0, j0
    cdef double f0, f1, g0, g1, a, b, c, d
    val = np.empty(m, dtype=np.float64)
    der0 = np.empty(m, dtype=np.float64)
    der1 = np.empty(m, dtype=np.float64)
    cdef double[::1] v = val, d0 = der0, d1 = der1
    with nogil:
        for p in range(m):
            _cell(a0[p], n0, &i0, &f0)
            _cell(a1[p], n1, &j0, &f1)
            a = img[i0, j0]
            b = img[i0 + 1, j0]
            c = img[i0, j0 + 1]
            d = img[i0 + 1, j0 + 1]
            g0 = 1.0 - f0
            g1 = 1.0 - f1
            v[p] = g0 * g1 * a + f0 * g1 * b + g0 * f1 * c + f0 * f1 * d
            if a0[p] >= 0.0 and a0[p] <= n0 - 1.0:
                d0[p] = g1 * (b - a) + f1 * (d - c)
            else:
                d0[p] = 0.0
            if a1[p] >= 0.0 and a1[p] <= n1 - 1.0:
                d1[p] = g0 * (c - a) + f0 * (d - b)
            else:
                d1[p] = 0.0
    shp = np.shape(c0)
    return val.reshape(shp), der0.reshape(shp), der1.reshape(shp)


def bilinear_scatter(vals, c0, c1, shape):
    cdef const double[::1] a0 = np.ascontiguousarray(c0, dtype=np.float64).ravel()
    cdef const double[::1] a1 = np.ascontiguousarray(c1, dtype=np.float64).ravel()
    cdef const double[::1] v = np.ascontiguousarray(vals, dtype=np.float64).ravel()
    cdef Py_ssize_t n0 = shape[0], n1 = shape[1]
    cdef Py_ssize_t m = a0.shape[0], p, i0, j0
    cdef double f0, f1, g0, g1, x
    out = np.zeros((n0, n1), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for p in range(m):
            _cell(a0[p], n0, &i0, &f0)
            _cell(a1[p], n1, &j0, &f1)
            g0 = 1.0 - f0
            g1 = 1.0 - f1
            x = v[p]
            o[i0, j0] += g0 * g1 * x
            o[i0 + 1, j0] += f0 * g1 * x
            o[i0, j0 + 1] += g0 * f1 * x
            o[i0 + 1, j0 + 1] += f0 * f1 * x
    return out


cdef inline Py_ssize_t _bucket(double c, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t b = <Py_ssize_t>floor(c + 0.5)
    if b < 0:
        return 0
    if b > n - 1:
        return n - 1
    return b


def shepard_resample(p0, p1, vals, shape, int k=4):
    cdef const double[::1] q0 = np.ascontiguousarray(p0, dtype=np.float64).ravel()
    cdef const double[::1] q1 = np.ascontiguousarray(p1, dtype=np.float64).ravel()
    cdef const double[::1] v = np.ascontiguousarray(vals, dtype=np.float64).ravel()
    cdef Py_ssize_t n0 = shape[0], n1 = shape[1]
    cdef Py_ssize_t m = q0.shape[0], p, i, j, r, a, b, s, t, cell, u
    if k > m:
        k = <int>m
    if k > 8:
        raise ValueError("at most 8 neighbours supported")

    # bucket points by nearest grid node (CSR layout, stable in point index)
    counts = np.zeros(n0 * n1 + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] start = counts
    for p in range(m):
        start[_bucket(q0[p], n0) * n1 + _bucket(q1[p], n1) + 1] += 1
    for cell in range(n0 * n1):
        start[cell + 1] += start[cell]
    order = np.empty(m, dtype=np.intp)
    fill = counts[:-1].copy()
    cdef Py_ssize_t[::1] ordv = order, fillv = fill
    for p in range(m):
        cell = _bucket(q0[p], n0) * n1 + _bucket(q1[p], n1)
        ordv[fillv[cell]] = p
        fillv[cell] += 1

    out = np.empty((n0, n1), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double bd[8]
    cdef Py_ssize_t bi[8]
    cdef Py_ssize_t found, rmax = (n0 if n0 > n1 else n1) + 1
    cdef double d2, num, den, w, bound
    with nogil:
        for i in range(n0):
            for j in range(n1):
                for u in range(k):
                    bd[u] = INFINITY
                    bi[u] = -1
                found = 0
                r = 0
                while True:
                    for a in range(i - r, i + r + 1):
                        if a < 0 or a >= n0:
                            continue
                        for b in range(j - r, j + r + 1):
                            if b < 0 or b >= n1:
                                continue
                            if a != i - r and a != i + r and b != j - r and b != j + r:
                                continue
                            cell = a * n1 + b
                            for s in range(start[cell], start[cell + 1]):
                                p = ordv[s]
                                d2 = (q0[p] - i) * (q0[p] - i) + (q1[p] - j) * (q1[p] - j)
                                found += 1
                                # insertion keeps (distance, index) ascending
                                if d2 < bd[k - 1] or (d2 == bd[k - 1] and p < bi[k - 1]):
                                    t = k - 1
                                    while t > 0 and (d2 < bd[t - 1] or (d2 == bd[t - 1] and p < bi[t - 1])):
                                        bd[t] = bd[t - 1]
                                        bi[t] = bi[t - 1]
                                        t -= 1
                                    bd[t] = d2
                                    bi[t] = p
                    bound = r + 0.5
                    if found >= k and bd[k - 1] <= bound * bound:
                        break
                    if r > rmax:
                        break
                    r += 1
                if bd[0] <= 1e-24:
                    o[i, j] = v[bi[0]]
                else:
                    num = 0.0
                    den = 0.0
                    for u in range(k):
                        w = 1.0 / bd[u]
                        num = num + w * v[bi[u]]
                        den = den + w
                    o[i, j] = num / den
    return out
