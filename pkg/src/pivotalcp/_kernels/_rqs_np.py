"""Pure-numpy rational-quadratic spline kernels.

All kernels work in normalized coordinates: inputs ``t`` live on [0, 1]
(values outside fall into affine tails with the boundary derivative),
bin widths ``w`` and heights ``h`` are positive and sum to one per row,
and ``d`` holds the K+1 knot derivatives.  Shapes: ``t`` is ``(n,)``,
``w`` and ``h`` are ``(n, K)``, ``d`` is ``(n, K + 1)``.

The log-determinant is returned in t-units; callers rescale for the
change of variables from the raw score range.
"""

from __future__ import annotations

import numpy as np


def _bin_index(t: np.ndarray, knots: np.ndarray) -> np.ndarray:
    K = knots.shape[1] - 1
    k = (t[:, None] >= knots[:, :-1]).sum(axis=1) - 1
    return np.clip(k, 0, K - 1)


def _gather(arr: np.ndarray, k: np.ndarray) -> np.ndarray:
    return arr[np.arange(arr.shape[0]), k]


def rqs_forward(t, w, h, d):
    """Evaluate the spline; returns ``(u, logdet)``."""
    t = np.asarray(t, dtype=float)
    n, K = w.shape
    xk = np.concatenate([np.zeros((n, 1)), np.cumsum(w, axis=1)], axis=1)
    yk = np.concatenate([np.zeros((n, 1)), np.cumsum(h, axis=1)], axis=1)

    u = np.empty(n)
    logdet = np.empty(n)

    lo = t < 0.0
    hi = t > 1.0
    inside = ~(lo | hi)

    if np.any(lo):
        d0 = d[lo, 0]
        u[lo] = d0 * t[lo]
        logdet[lo] = np.log(d0)
    if np.any(hi):
        dK = d[hi, K]
        u[hi] = 1.0 + dK * (t[hi] - 1.0)
        logdet[hi] = np.log(dK)
    if np.any(inside):
        idx = np.flatnonzero(inside)
        ti = t[idx]
        k = _bin_index(ti, xk[idx])
        wk = _gather(w[idx], k)
        hk = _gather(h[idx], k)
        dk = _gather(d[idx], k)
        dk1 = _gather(d[idx], k + 1)
        x0 = _gather(xk[idx], k)
        y0 = _gather(yk[idx], k)
        sk = hk / wk
        xi = (ti - x0) / wk
        r = xi * (1.0 - xi)
        D = sk + (dk1 + dk - 2.0 * sk) * r
        N = dk1 * xi**2 + 2.0 * sk * r + dk * (1.0 - xi) ** 2
        u[idx] = y0 + hk * (sk * xi**2 + dk * r) / D
        logdet[idx] = 2.0 * np.log(sk) + np.log(N) - 2.0 * np.log(D)
    return u, logdet


def rqs_inverse(u, w, h, d):
    """Invert the spline by solving the per-bin quadratic; returns ``t``."""
    u = np.asarray(u, dtype=float)
    n, K = w.shape
    xk = np.concatenate([np.zeros((n, 1)), np.cumsum(w, axis=1)], axis=1)
    yk = np.concatenate([np.zeros((n, 1)), np.cumsum(h, axis=1)], axis=1)

    t = np.empty(n)
    lo = u < 0.0
    hi = u > 1.0
    inside = ~(lo | hi)

    if np.any(lo):
        t[lo] = u[lo] / d[lo, 0]
    if np.any(hi):
        t[hi] = 1.0 + (u[hi] - 1.0) / d[hi, K]
    if np.any(inside):
        idx = np.flatnonzero(inside)
        ui = u[idx]
        k = _bin_index(ui, yk[idx])
        wk = _gather(w[idx], k)
        hk = _gather(h[idx], k)
        dk = _gather(d[idx], k)
        dk1 = _gather(d[idx], k + 1)
        x0 = _gather(xk[idx], k)
        y0 = _gather(yk[idx], k)
        sk = hk / wk
        delta = ui - y0
        two_s = dk1 + dk - 2.0 * sk
        a = hk * (sk - dk) + delta * two_s
        b = hk * dk - delta * two_s
        c = -sk * delta
        disc = b * b - 4.0 * a * c
        xi = 2.0 * c / (-b - np.sqrt(np.maximum(disc, 0.0)))
        t[idx] = x0 + xi * wk
    return t


def rqs_backward(t, w, h, d):
    """Gradients of the forward log-determinant w.r.t. ``(w, h, d)``.

    Returns ``(gw, gh, gd)`` with the same shapes as the inputs; the
    caller negates for the negative log-likelihood and chains through
    the softmax/softplus head transforms.
    """
    t = np.asarray(t, dtype=float)
    n, K = w.shape
    xk = np.concatenate([np.zeros((n, 1)), np.cumsum(w, axis=1)], axis=1)

    gw = np.zeros((n, K))
    gh = np.zeros((n, K))
    gd = np.zeros((n, K + 1))

    lo = t < 0.0
    hi = t > 1.0
    inside = ~(lo | hi)

    if np.any(lo):
        gd[lo, 0] = 1.0 / d[lo, 0]
    if np.any(hi):
        gd[hi, K] = 1.0 / d[hi, K]
    if np.any(inside):
        idx = np.flatnonzero(inside)
        ti = t[idx]
        k = _bin_index(ti, xk[idx])
        wk = _gather(w[idx], k)
        hk = _gather(h[idx], k)
        dk = _gather(d[idx], k)
        dk1 = _gather(d[idx], k + 1)
        x0 = _gather(xk[idx], k)
        sk = hk / wk
        xi = (ti - x0) / wk
        r = xi * (1.0 - xi)
        two_s = dk1 + dk - 2.0 * sk
        D = sk + two_s * r
        N = dk1 * xi**2 + 2.0 * sk * r + dk * (1.0 - xi) ** 2

        g_sk = 2.0 / sk + 2.0 * r / N - 2.0 * (1.0 - 2.0 * r) / D
        g_dk = (1.0 - xi) ** 2 / N - 2.0 * r / D
        g_dk1 = xi**2 / N - 2.0 * r / D
        n_xi = 2.0 * dk1 * xi + 2.0 * sk * (1.0 - 2.0 * xi) - 2.0 * dk * (1.0 - xi)
        d_xi = two_s * (1.0 - 2.0 * xi)
        g_xi = n_xi / N - 2.0 * d_xi / D

        # xi depends on the left knot through every width before bin k
        before = np.arange(K)[None, :] < k[:, None]
        gw[idx] += before * (-g_xi / wk)[:, None]
        gw[idx, k] += -g_xi * xi / wk - g_sk * sk / wk
        gh[idx, k] += g_sk / wk
        gd[idx, k] += g_dk
        gd[idx, k + 1] += g_dk1
    return gw, gh, gd
