# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rational-quadratic spline kernels.

Same contract as the numpy fallback in ``_rqs_np``: per-row bin widths,
heights and knot derivatives in normalized coordinates, affine tails
outside [0, 1].
"""

from libc.math cimport log, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _find_bin(double v, double* cum, Py_ssize_t K) nogil:
    # cum holds the K interior+right knots (cumulative sums), cum[K-1] == 1
    cdef Py_ssize_t lo = 0, hi = K - 1, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if v < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def rqs_forward(double[::1] t, double[:, ::1] w, double[:, ::1] h,
                double[:, ::1] d):
    cdef Py_ssize_t n = t.shape[0], K = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] u_arr = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] ld_arr = np.empty(n)
    cdef double[::1] u = u_arr, ld = ld_arr
    cdef double[::1] cw = np.empty(K), ch = np.empty(K)
    cdef Py_ssize_t i, j, k
    cdef double ti, acc, wk, hk, dk, dk1, x0, y0, sk, xi, r, D, N

    for i in range(n):
        ti = t[i]
        if ti < 0.0:
            u[i] = d[i, 0] * ti
            ld[i] = log(d[i, 0])
            continue
        if ti > 1.0:
            u[i] = 1.0 + d[i, K] * (ti - 1.0)
            ld[i] = log(d[i, K])
            continue
        acc = 0.0
        for j in range(K):
            acc += w[i, j]
            cw[j] = acc
        acc = 0.0
        for j in range(K):
            acc += h[i, j]
            ch[j] = acc
        k = _find_bin(ti, &cw[0], K)
        wk = w[i, k]
        hk = h[i, k]
        dk = d[i, k]
        dk1 = d[i, k + 1]
        x0 = cw[k] - wk
        y0 = ch[k] - hk
        sk = hk / wk
        xi = (ti - x0) / wk
        r = xi * (1.0 - xi)
        D = sk + (dk1 + dk - 2.0 * sk) * r
        N = dk1 * xi * xi + 2.0 * sk * r + dk * (1.0 - xi) * (1.0 - xi)
        u[i] = y0 + hk * (sk * xi * xi + dk * r) / D
        ld[i] = 2.0 * log(sk) + log(N) - 2.0 * log(D)
    return u_arr, ld_arr


def rqs_inverse(double[::1] u, double[:, ::1] w, double[:, ::1] h,
                double[:, ::1] d):
    cdef Py_ssize_t n = u.shape[0], K = w.shape[1]
    cdef cnp.ndarray[double, ndim=1] t_arr = np.empty(n)
    cdef double[::1] t = t_arr
    cdef double[::1] cw = np.empty(K), ch = np.empty(K)
    cdef Py_ssize_t i, j, k
    cdef double ui, acc, wk, hk, dk, dk1, x0, y0, sk, delta, two_s, a, b, c
    cdef double disc, xi

    for i in range(n):
        ui = u[i]
        if ui < 0.0:
            t[i] = ui / d[i, 0]
            continue
        if ui > 1.0:
            t[i] = 1.0 + (ui - 1.0) / d[i, K]
            continue
        acc = 0.0
        for j in range(K):
            acc += w[i, j]
            cw[j] = acc
        acc = 0.0
        for j in range(K):
            acc += h[i, j]
            ch[j] = acc
        k = _find_bin(ui, &ch[0], K)
        wk = w[i, k]
        hk = h[i, k]
        dk = d[i, k]
        dk1 = d[i, k + 1]
        x0 = cw[k] - wk
        y0 = ch[k] - hk
        sk = hk / wk
        delta = ui - y0
        two_s = dk1 + dk - 2.0 * sk
        a = hk * (sk - dk) + delta * two_s
        b = hk * dk - delta * two_s
        c = -sk * delta
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            disc = 0.0
        xi = 2.0 * c / (-b - sqrt(disc))
        t[i] = x0 + xi * wk
    return t_arr


def rqs_backward(double[::1] t, double[:, ::1] w, double[:, ::1] h,
                 double[:, ::1] d):
    cdef Py_ssize_t n = t.shape[0], K = w.shape[1]
    cdef cnp.ndarray[double, ndim=2] gw_arr = np.zeros((n, K))
    cdef cnp.ndarray[double, ndim=2] gh_arr = np.zeros((n, K))
    cdef cnp.ndarray[double, ndim=2] gd_arr = np.zeros((n, K + 1))
    cdef double[:, ::1] gw = gw_arr, gh = gh_arr, gd = gd_arr
    cdef double[::1] cw = np.empty(K)
    cdef Py_ssize_t i, j, k
    cdef double ti, acc, wk, hk, dk, dk1, x0, sk, xi, r, two_s, D, N
    cdef double g_sk, g_dk, g_dk1, n_xi, d_xi, g_xi

    for i in range(n):
        ti = t[i]
        if ti < 0.0:
            gd[i, 0] = 1.0 / d[i, 0]
            continue
        if ti > 1.0:
            gd[i, K] = 1.0 / d[i, K]
            continue
        acc = 0.0
        for j in range(K):
            acc += w[i, j]
            cw[j] = acc
        k = _find_bin(ti, &cw[0], K)
        wk = w[i, k]
        hk = h[i, k]
        dk = d[i, k]
        dk1 = d[i, k + 1]
        x0 = cw[k] - wk
        sk = hk / wk
        xi = (ti - x0) / wk
        r = xi * (1.0 - xi)
        two_s = dk1 + dk - 2.0 * sk
        D = sk + two_s * r
        N = dk1 * xi * xi + 2.0 * sk * r + dk * (1.0 - xi) * (1.0 - xi)

        g_sk = 2.0 / sk + 2.0 * r / N - 2.0 * (1.0 - 2.0 * r) / D
        g_dk = (1.0 - xi) * (1.0 - xi) / N - 2.0 * r / D
        g_dk1 = xi * xi / N - 2.0 * r / D
        n_xi = 2.0 * dk1 * xi + 2.0 * sk * (1.0 - 2.0 * xi) - 2.0 * dk * (1.0 - xi)
        d_xi = two_s * (1.0 - 2.0 * xi)
        g_xi = n_xi / N - 2.0 * d_xi / D

        for j in range(k):
            gw[i, j] = -g_xi / wk
        gw[i, k] += -g_xi * xi / wk - g_sk * sk / wk
        gh[i, k] = g_sk / wk
        gd[i, k] = g_dk
        gd[i, k + 1] = g_dk1
    return gw_arr, gh_arr, gd_arr
