# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kinematic-chain kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, hypot

cnp.import_array()

cdef double ANTIPARALLEL_SIN_TOL = 1e-5
cdef double LENGTH_TOL = 1e-8


cdef inline void cross3(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double dot3(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void matmul3(const double* A, const double* B, double* out) noexcept nogil:
    # out may not alias A or B
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j]


cdef inline void matvec3(const double* A, const double* v, double* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = A[3 * i] * v[0] + A[3 * i + 1] * v[1] + A[3 * i + 2] * v[2]


cdef inline void mattvec3(const double* A, const double* v, double* out) noexcept nogil:
    cdef int i
    for i in range(3):
        out[i] = A[i] * v[0] + A[3 + i] * v[1] + A[6 + i] * v[2]


cdef inline void eye3(double* out) noexcept nogil:
    cdef int i
    for i in range(9):
        out[i] = 0.0
    out[0] = 1.0
    out[4] = 1.0
    out[8] = 1.0


cdef inline void skew_sq_combo(const double* n, double a, double b, double* out) noexcept nogil:
    # out = I + a [n]x + b [n]x^2, written as the same products numpy evaluates
    cdef double k[9]
    cdef double k2[9]
    cdef int i
    k[0] = 0.0; k[1] = -n[2]; k[2] = n[1]
    k[3] = n[2]; k[4] = 0.0; k[5] = -n[0]
    k[6] = -n[1]; k[7] = n[0]; k[8] = 0.0
    matmul3(k, k, k2)
    eye3(out)
    for i in range(9):
        out[i] = out[i] + a * k[i] + b * k2[i]


cdef inline void rodrigues3(const double* n, double c, double s, double* out) noexcept nogil:
    skew_sq_combo(n, s, 1.0 - c, out)


cdef inline void twist3(const double* t, double c, double s, double* out) noexcept nogil:
    cdef double nt = sqrt(dot3(t, t))
    skew_sq_combo(t, s / nt, (1.0 - c) / (nt * nt), out)


cdef inline void fallback_axis3(const double* th, double* u) noexcept nogil:
    cdef double nu
    u[0] = 1.0 - th[0] * th[0]
    u[1] = 0.0 - th[0] * th[1]
    u[2] = 0.0 - th[0] * th[2]
    nu = sqrt(dot3(u, u))
    if nu < LENGTH_TOL:
        u[0] = 0.0 - th[1] * th[0]
        u[1] = 1.0 - th[1] * th[1]
        u[2] = 0.0 - th[1] * th[2]
        nu = sqrt(dot3(u, u))
    u[0] /= nu
    u[1] /= nu
    u[2] /= nu


cdef void swing_unit3(const double* th, const double* ph, double* out) noexcept nogil:
    cdef double x[3]
    cdef double n[3]
    cdef double u[3]
    cdef double q[3]
    cdef double flip[9]
    cdef double small[9]
    cdef double s, c
    cdef int i, j
    cross3(th, ph, x)
    s = sqrt(dot3(x, x))
    c = dot3(th, ph)
    if s == 0.0:
        if c > 0.0:
            eye3(out)
            return
    elif s >= ANTIPARALLEL_SIN_TOL or c > 0.0:
        for i in range(3):
            n[i] = x[i] / s
        rodrigues3(n, c, s, out)
        return
    fallback_axis3(th, u)
    for i in range(3):
        for j in range(3):
            flip[3 * i + j] = 2.0 * u[i] * u[j] - (1.0 if i == j else 0.0)
    matvec3(flip, th, q)
    cross3(q, ph, x)
    s = sqrt(dot3(x, x))
    if s == 0.0:
        for i in range(9):
            out[i] = flip[i]
        return
    for i in range(3):
        n[i] = x[i] / s
    rodrigues3(n, dot3(q, ph), s, small)
    matmul3(small, flip, out)


def fk_batch(const long[:] parents, rest_in, rots_in):
    cdef double[:, :, ::1] rest = np.ascontiguousarray(rest_in, dtype=np.float64)
    cdef double[:, :, :, ::1] rots = np.ascontiguousarray(rots_in, dtype=np.float64)
    cdef Py_ssize_t B = rest.shape[0], K = rest.shape[1]
    joints_arr = np.empty((B, K, 3))
    grots_arr = np.empty((B, K, 3, 3))
    cdef double[:, :, ::1] joints = joints_arr
    cdef double[:, :, :, ::1] grots = grots_arr
    cdef double off[3]
    cdef double rv[3]
    cdef Py_ssize_t b, k, i
    cdef long q
    with nogil:
        for b in range(B):
            for k in range(K):
                q = parents[k]
                if q < 0:
                    for i in range(9):
                        (&grots[b, k, 0, 0])[i] = (&rots[b, k, 0, 0])[i]
                    for i in range(3):
                        joints[b, k, i] = rest[b, k, i]
                else:
                    for i in range(3):
                        off[i] = rest[b, k, i] - rest[b, q, i]
                    matmul3(&grots[b, q, 0, 0], &rots[b, k, 0, 0], &grots[b, k, 0, 0])
                    matvec3(&grots[b, q, 0, 0], off, rv)
                    for i in range(3):
                        joints[b, k, i] = rest[b, k, i] + (joints[b, q, i] - rest[b, q, i]) + (rv[i] - off[i])
    return joints_arr, grots_arr


def ik_batch(const long[:] parents, const long[:] primary, const long[:, :] secondary,
             rest_in, targets_in, twists_in):
    cdef double[:, :, ::1] rest = np.ascontiguousarray(rest_in, dtype=np.float64)
    cdef double[:, :, ::1] targets = np.ascontiguousarray(targets_in, dtype=np.float64)
    cdef double[:, :, ::1] twists = np.ascontiguousarray(twists_in, dtype=np.float64)
    cdef Py_ssize_t B = rest.shape[0], K = rest.shape[1], NS = secondary.shape[1]
    rots_arr = np.zeros((B, K, 3, 3))
    flags_arr = np.zeros((B, K), dtype=np.uint8)
    grot_arr = np.zeros((K, 3, 3))
    cdef double[:, :, :, ::1] rots = rots_arr
    cdef unsigned char[:, ::1] flags = flags_arr
    cdef double[:, :, ::1] grot = grot_arr
    cdef double ident[9]
    cdef double S[9]
    cdef double T[9]
    cdef double R[9]
    cdef double t[3]
    cdef double dw[3]
    cdef double d[3]
    cdef double th[3]
    cdef double dh[3]
    cdef double tj[3]
    cdef double a[3]
    cdef double e[3]
    cdef double ax[3]
    cdef double* rp
    cdef double nt, nd, num, den, h, cs, sn, ad, ed
    cdef Py_ssize_t b, k, i, m
    cdef long q, c, j
    cdef bint has_sec
    eye3(ident)
    with nogil:
        for b in range(B):
            for k in range(K):
                q = parents[k]
                if q < 0:
                    rp = ident
                else:
                    rp = &grot[q, 0, 0]
                c = primary[k]
                eye3(R)
                if c >= 0:
                    for i in range(3):
                        t[i] = rest[b, c, i] - rest[b, k, i]
                        dw[i] = targets[b, c, i] - targets[b, k, i]
                    mattvec3(rp, dw, d)
                    nt = sqrt(dot3(t, t))
                    nd = sqrt(dot3(d, d))
                    if nt < LENGTH_TOL or nd < LENGTH_TOL:
                        flags[b, k] = 1
                    else:
                        for i in range(3):
                            th[i] = t[i] / nt
                            dh[i] = d[i] / nd
                        swing_unit3(th, dh, S)
                        has_sec = False
                        num = 0.0
                        den = 0.0
                        for m in range(NS):
                            j = secondary[k, m]
                            if j < 0:
                                continue
                            has_sec = True
                            for i in range(3):
                                tj[i] = rest[b, j, i] - rest[b, k, i]
                                dw[i] = targets[b, j, i] - targets[b, k, i]
                            matvec3(S, tj, a)
                            mattvec3(rp, dw, e)
                            ad = dot3(a, dh)
                            ed = dot3(e, dh)
                            for i in range(3):
                                a[i] = a[i] - ad * dh[i]
                                e[i] = e[i] - ed * dh[i]
                            cross3(a, e, ax)
                            num += dot3(dh, ax)
                            den += dot3(a, e)
                        if has_sec:
                            h = hypot(num, den)
                            if h == 0.0:
                                cs = 1.0
                                sn = 0.0
                            else:
                                cs = den / h
                                sn = num / h
                            twist3(t, cs, sn, T)
                            matmul3(S, T, R)
                        else:
                            cs = twists[b, k, 0]
                            sn = twists[b, k, 1]
                            h = hypot(cs, sn)
                            if h < LENGTH_TOL:
                                flags[b, k] = 1
                                for i in range(9):
                                    R[i] = S[i]
                            else:
                                twist3(t, cs / h, sn / h, T)
                                matmul3(S, T, R)
                elif q >= 0:
                    for i in range(3):
                        t[i] = rest[b, k, i] - rest[b, q, i]
                    cs = twists[b, k, 0]
                    sn = twists[b, k, 1]
                    h = hypot(cs, sn)
                    if sqrt(dot3(t, t)) < LENGTH_TOL or h < LENGTH_TOL:
                        flags[b, k] = 1
                    else:
                        twist3(t, cs / h, sn / h, R)
                for i in range(9):
                    (&rots[b, k, 0, 0])[i] = R[i]
                matmul3(rp, R, &grot[k, 0, 0])
    return rots_arr, flags_arr


def twist_batch(const long[:] parents, const long[:] primary, rest_in, rots_in):
    cdef double[:, :, ::1] rest = np.ascontiguousarray(rest_in, dtype=np.float64)
    cdef double[:, :, :, ::1] rots = np.ascontiguousarray(rots_in, dtype=np.float64)
    cdef Py_ssize_t B = rest.shape[0], K = rest.shape[1]
    out_arr = np.zeros((B, K, 2))
    cdef double[:, :, ::1] out = out_arr
    cdef double t[3]
    cdef double th[3]
    cdef double rt[3]
    cdef double S[9]
    cdef double tw[9]
    cdef double* Rk
    cdef double nt, cs, sn, h
    cdef Py_ssize_t b, k, i, r, col
    cdef long c, q
    with nogil:
        for b in range(B):
            for k in range(K):
                out[b, k, 0] = 1.0
                q = parents[k]
                if q < 0:
                    continue
                c = primary[k]
                for i in range(3):
                    if c >= 0:
                        t[i] = rest[b, c, i] - rest[b, k, i]
                    else:
                        t[i] = rest[b, k, i] - rest[b, q, i]
                nt = sqrt(dot3(t, t))
                if nt < LENGTH_TOL:
                    continue
                for i in range(3):
                    th[i] = t[i] / nt
                Rk = &rots[b, k, 0, 0]
                matvec3(Rk, th, rt)
                swing_unit3(th, rt, S)
                # tw = S^T R
                for r in range(3):
                    for col in range(3):
                        tw[3 * r + col] = S[r] * Rk[col] + S[3 + r] * Rk[3 + col] + S[6 + r] * Rk[6 + col]
                cs = 0.5 * (tw[0] + tw[4] + tw[8] - 1.0)
                sn = 0.5 * (th[0] * (tw[7] - tw[5]) + th[1] * (tw[2] - tw[6]) + th[2] * (tw[3] - tw[1]))
                h = hypot(cs, sn)
                out[b, k, 0] = cs / h
                out[b, k, 1] = sn / h
    return out_arr
