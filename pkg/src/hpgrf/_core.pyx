# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: latent assignment draws, kernel sums, pair counts."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()


def sample_assignments(const double[:, ::1] points, const cnp.int64_t[::1] types,
                       const double[:, ::1] theta, const double[:, ::1] logw,
                       const double[::1] inv2s2, const double[::1] u):
    cdef Py_ssize_t n = points.shape[0], M = theta.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, m, a, j
    cdef double top, s, diff, d2, acc, target, best
    cdef Py_ssize_t nfallback = 0, arg
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    buf = np.empty(M, dtype=np.float64)
    cdef double[::1] lg = buf
    for i in range(n):
        j = types[i]
        top = -INFINITY
        for m in range(M):
            d2 = 0.0
            for a in range(d):
                diff = points[i, a] - theta[m, a]
                d2 += diff * diff
            lg[m] = logw[j, m] - d2 * inv2s2[j]
            if lg[m] > top:
                top = lg[m]
        if top == -INFINITY:
            nfallback += 1
            best = INFINITY
            arg = 0
            for m in range(M):
                d2 = 0.0
                for a in range(d):
                    diff = points[i, a] - theta[m, a]
                    d2 += diff * diff
                if d2 < best:
                    best = d2
                    arg = m
            res[i] = arg
            continue
        s = 0.0
        for m in range(M):
            lg[m] = exp(lg[m] - top)
            s += lg[m]
        target = u[i] * s
        acc = 0.0
        arg = M - 1
        for m in range(M):
            acc += lg[m]
            if acc > target:
                arg = m
                break
        res[i] = arg
    return out, nfallback


def kernel_sums(const double[:, ::1] points, const double[:, ::1] theta,
                const double[::1] weights, double inv2s2):
    cdef Py_ssize_t n = points.shape[0], M = theta.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, m, a
    cdef double acc, d2, diff
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    for i in range(n):
        acc = 0.0
        for m in range(M):
            if weights[m] == 0.0:
                continue
            d2 = 0.0
            for a in range(d):
                diff = points[i, a] - theta[m, a]
                d2 += diff * diff
            acc += weights[m] * exp(-d2 * inv2s2)
        res[i] = acc
    return out


def pair_counts(const double[:, ::1] points, const double[::1] w, const double[::1] radii):
    cdef Py_ssize_t n = points.shape[0], R = radii.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, k, a, lo, hi, mid
    cdef double dist, diff
    hist = np.zeros(R + 1, dtype=np.float64)
    cdef double[::1] h = hist
    for i in range(n):
        for k in range(i + 1, n):
            dist = 0.0
            for a in range(d):
                diff = points[i, a] - points[k, a]
                dist += diff * diff
            dist = sqrt(dist)
            # first radius >= dist
            lo = 0
            hi = R
            while lo < hi:
                mid = (lo + hi) // 2
                if radii[mid] < dist:
                    lo = mid + 1
                else:
                    hi = mid
            h[lo] += 2.0 * w[i] * w[k]
    return np.cumsum(hist[:R])
