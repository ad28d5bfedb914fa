# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core.

Each function is the loop form of its _pyk twin with an identical
floating-point operation order, so results are bit-for-bit equal to the
pure-Python path (the extension is built with -ffp-contract=off).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, sqrt

cnp.import_array()

cdef double SQRT1_2 = sqrt(0.5)


cdef void _axis_profile(double[::1] out, Py_ssize_t n, double lo, double hi,
                        double sigma) noexcept:
    cdef Py_ssize_t i
    cdef double c, v, peak
    if sigma <= 0.0:
        for i in range(n):
            c = i + 0.5
            out[i] = 1.0 if (lo <= c < hi) else 0.0
        return
    peak = 0.0
    for i in range(n):
        c = i + 0.5
        v = 0.5 * (erf((hi - c) / sigma * SQRT1_2) - erf((lo - c) / sigma * SQRT1_2))
        out[i] = v
        if v > peak:
            peak = v
    if peak > 0.0:
        for i in range(n):
            out[i] = out[i] / peak


def soft_box_mask(Py_ssize_t h, Py_ssize_t w, double x1, double y1,
                  double x2, double y2, double sigma):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fy = np.empty(h, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] fx = np.empty(w, dtype=np.float64)
    _axis_profile(fy, h, y1, y2, sigma)
    _axis_profile(fx, w, x1, x2, sigma)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((h, w), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double[::1] fyv = fy
    cdef double[::1] fxv = fx
    cdef double[:, ::1] ov = out
    for i in range(h):
        for j in range(w):
            ov[i, j] = fyv[i] * fxv[j]
    return out


def pool_sums(cnp.ndarray frames, Py_ssize_t gh, Py_ssize_t gw):
    cdef const float[:, :, :, ::1] fv = np.ascontiguousarray(frames, dtype=np.float32)
    cdef Py_ssize_t t = fv.shape[0], hh = fv.shape[1], ww = fv.shape[2], cc = fv.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(gh * gw, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t gy, gx, r0, r1, c0, c1, ti, hi, wi, ci
    cdef double acc
    for gy in range(gh):
        r0 = (gy * hh) // gh
        r1 = ((gy + 1) * hh) // gh
        for gx in range(gw):
            c0 = (gx * ww) // gw
            c1 = ((gx + 1) * ww) // gw
            acc = 0.0
            for ti in range(t):
                for hi in range(r0, r1):
                    for wi in range(c0, c1):
                        for ci in range(cc):
                            acc += <double> fv[ti, hi, wi, ci]
            ov[gy * gw + gx] = acc
    return out


def union_max(cnp.ndarray masks, cnp.ndarray strengths):
    cdef const double[:, :, ::1] mv = np.ascontiguousarray(masks, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(strengths, dtype=np.float64)
    cdef Py_ssize_t k = mv.shape[0], h = mv.shape[1], w = mv.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] best = np.zeros((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.int32_t, ndim=2] arg = np.full((h, w), -1, dtype=np.int32)
    cdef double[:, ::1] bv = best
    cdef int[:, ::1] av = arg
    cdef Py_ssize_t ki, i, j
    cdef double cand, m
    for ki in range(k):
        for i in range(h):
            for j in range(w):
                m = mv[ki, i, j]
                cand = sv[ki] * m
                if cand > bv[i, j] or (av[i, j] == -1 and m > 0.0 and cand >= bv[i, j]):
                    bv[i, j] = cand
                    av[i, j] = <int> ki
    return best, arg


def union_confnorm(cnp.ndarray masks, cnp.ndarray strengths, cnp.ndarray confs):
    cdef const double[:, :, ::1] mv = np.ascontiguousarray(masks, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(strengths, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(confs, dtype=np.float64)
    cdef Py_ssize_t k = mv.shape[0], h = mv.shape[1], w = mv.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] num = np.zeros((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] den = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] nv = num
    cdef double[:, ::1] dv = den
    cdef Py_ssize_t ki, i, j
    cdef double m, o
    for ki in range(k):
        for i in range(h):
            for j in range(w):
                m = mv[ki, i, j]
                if m > 0.0:
                    nv[i, j] = nv[i, j] + cv[ki] * (sv[ki] * m)
                    dv[i, j] = dv[i, j] + cv[ki]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] ov = out
    for i in range(h):
        for j in range(w):
            if dv[i, j] > 0.0:
                o = nv[i, j] / dv[i, j]
                if o < 0.0:
                    o = 0.0
                if o > 1.0:
                    o = 1.0
                ov[i, j] = o
    return out


def union_avg(cnp.ndarray masks, cnp.ndarray strengths):
    cdef const double[:, :, ::1] mv = np.ascontiguousarray(masks, dtype=np.float64)
    cdef const double[::1] sv = np.ascontiguousarray(strengths, dtype=np.float64)
    cdef Py_ssize_t k = mv.shape[0], h = mv.shape[1], w = mv.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] num = np.zeros((h, w), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cnt = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] nv = num
    cdef double[:, ::1] tv = cnt
    cdef Py_ssize_t ki, i, j
    cdef double m, o
    for ki in range(k):
        for i in range(h):
            for j in range(w):
                m = mv[ki, i, j]
                if m > 0.0:
                    nv[i, j] = nv[i, j] + sv[ki] * m
                    tv[i, j] = tv[i, j] + 1.0
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] ov = out
    for i in range(h):
        for j in range(w):
            if tv[i, j] > 0.0:
                o = nv[i, j] / tv[i, j]
                if o < 0.0:
                    o = 0.0
                if o > 1.0:
                    o = 1.0
                ov[i, j] = o
    return out


def normalize_overlaps_px(cnp.ndarray masks, cnp.ndarray confs):
    cdef const double[:, :, ::1] mv = np.ascontiguousarray(masks, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(confs, dtype=np.float64)
    cdef Py_ssize_t k = mv.shape[0], h = mv.shape[1], w = mv.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((k, h, w), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t ki, i, j
    cdef double total, weighted
    for i in range(h):
        for j in range(w):
            total = 0.0
            weighted = 0.0
            for ki in range(k):
                total = total + mv[ki, i, j]
                weighted = weighted + cv[ki] * mv[ki, i, j]
            if total > 1.0:
                for ki in range(k):
                    if weighted > 0.0:
                        ov[ki, i, j] = (mv[ki, i, j] * cv[ki]) / weighted
                    else:
                        ov[ki, i, j] = mv[ki, i, j] / total
            else:
                for ki in range(k):
                    ov[ki, i, j] = mv[ki, i, j]
    return out


def compose_z(cnp.ndarray object_mask, double frame_value):
    cdef const double[:, ::1] mv = np.ascontiguousarray(object_mask, dtype=np.float64)
    cdef Py_ssize_t h = mv.shape[0], w = mv.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double z
    for i in range(h):
        for j in range(w):
            z = frame_value + mv[i, j]
            if z < 0.0:
                z = 0.0
            if z > 1.0:
                z = 1.0
            ov[i, j] = z
    return out


def occlusion_blend(cnp.ndarray frames, cnp.ndarray z, double fill):
    cdef const float[:, :, :, ::1] fv = np.ascontiguousarray(frames, dtype=np.float32)
    cdef const double[:, :, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t t = fv.shape[0], h = fv.shape[1], w = fv.shape[2], c = fv.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.empty((t, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t ti, i, j, ci
    cdef double zz
    for ti in range(t):
        for i in range(h):
            for j in range(w):
                zz = zv[ti, i, j]
                for ci in range(c):
                    ov[ti, i, j, ci] = (<double> fv[ti, i, j, ci]) * (1.0 - zz) + fill * zz
    return out


def additive_clamp(cnp.ndarray frames, cnp.ndarray z):
    cdef const float[:, :, :, ::1] fv = np.ascontiguousarray(frames, dtype=np.float32)
    cdef const double[:, :, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t t = fv.shape[0], h = fv.shape[1], w = fv.shape[2], c = fv.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.empty((t, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t ti, i, j, ci
    cdef double v
    for ti in range(t):
        for i in range(h):
            for j in range(w):
                for ci in range(c):
                    v = (<double> fv[ti, i, j, ci]) + zv[ti, i, j]
                    if v < 0.0:
                        v = 0.0
                    if v > 1.0:
                        v = 1.0
                    ov[ti, i, j, ci] = v
    return out
