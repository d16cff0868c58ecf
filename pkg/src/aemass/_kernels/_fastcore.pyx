# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled curvature kernels; drop-in replacement for the NumPy reference.

Same index layout as reference.py: dg[m, k, i, j] = d_k g_ij and
d2g[m, k, l, i, j] = d_k d_l g_ij over a batch of m points.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def first_order(double[:, :, ::1] g, double[:, :, ::1] ginv, double[:, :, :, ::1] dg):
    cdef Py_ssize_t m = g.shape[0]
    cdef Py_ssize_t n = g.shape[1]
    cdef Py_ssize_t a, i, j, k, l, p, q, u, v

    f_arr = np.empty((m, n, n))
    df_arr = np.empty((m, n, n, n))
    gamma_arr = np.empty((m, n, n, n))
    v_arr = np.zeros((m, n))
    w_arr = np.zeros((m, n))
    qs_arr = np.zeros(m)
    gt_arr = np.empty(n)

    cdef double[:, :, ::1] f = f_arr
    cdef double[:, :, :, ::1] df = df_arr
    cdef double[:, :, :, ::1] gamma = gamma_arr
    cdef double[:, ::1] vv = v_arr
    cdef double[:, ::1] ww = w_arr
    cdef double[::1] qs = qs_arr
    cdef double[::1] gt = gt_arr
    cdef double acc, s

    for a in range(m):
        for i in range(n):
            for j in range(n):
                f[a, i, j] = ginv[a, i, j] - (1.0 if i == j else 0.0)

        for k in range(n):
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for p in range(n):
                        for q in range(n):
                            acc += ginv[a, i, p] * ginv[a, j, q] * dg[a, k, p, q]
                    df[a, k, i, j] = -acc

        for k in range(n):
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += ginv[a, k, l] * (dg[a, i, j, l] + dg[a, j, i, l]
                                                - dg[a, l, i, j])
                    gamma[a, k, i, j] = 0.5 * acc

        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += dg[a, j, i, j] - dg[a, i, j, j]
            ww[a, i] = acc

        for i in range(n):
            acc = 0.0
            for j in range(n):
                for k in range(n):
                    for l in range(n):
                        acc += (ginv[a, i, j] * ginv[a, k, l]
                                - ginv[a, i, k] * ginv[a, j, l]) * dg[a, k, j, l]
            vv[a, i] = acc

        for u in range(n):
            acc = 0.0
            for v in range(n):
                acc += gamma[a, v, v, u]
            gt[u] = acc

        s = 0.0
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for u in range(n):
                    acc += gamma[a, u, i, j] * gt[u]
                    for v in range(n):
                        acc -= gamma[a, u, v, i] * gamma[a, v, j, u]
                s += ginv[a, i, j] * acc
        for v in range(n):
            for i in range(n):
                for j in range(n):
                    s -= df[a, v, i, j] * gamma[a, v, i, j]
        for i in range(n):
            for j in range(n):
                s += df[a, i, i, j] * gt[j]
        qs[a] = s

    return f_arr, df_arr, gamma_arr, v_arr, w_arr, qs_arr


def second_order(double[:, :, ::1] g, double[:, :, ::1] ginv,
                 double[:, :, :, ::1] dg, double[:, :, :, :, ::1] d2g):
    cdef Py_ssize_t m = g.shape[0]
    cdef Py_ssize_t n = g.shape[1]
    cdef Py_ssize_t a, i, j, k, l, u

    f_arr, df_arr, gamma_arr, v_arr, w_arr, qs_arr = first_order(g, ginv, dg)

    lead_arr = np.empty((m, n, n))
    qric_arr = np.empty((m, n, n))
    scal_arr = np.zeros(m)
    divv_arr = np.zeros(m)
    gt_arr = np.empty(n)
    dfc_arr = np.empty(n)

    cdef double[:, :, :, ::1] df = df_arr
    cdef double[:, :, :, ::1] gamma = gamma_arr
    cdef double[:, :, ::1] lead = lead_arr
    cdef double[:, :, ::1] qric = qric_arr
    cdef double[::1] scal = scal_arr
    cdef double[::1] divv = divv_arr
    cdef double[::1] gt = gt_arr
    cdef double[::1] dfc = dfc_arr
    cdef double acc, s, t3, t4

    for a in range(m):
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    for l in range(n):
                        acc += ginv[a, k, l] * (d2g[a, k, i, l, j] + d2g[a, k, j, l, i]
                                                - d2g[a, k, l, i, j] - d2g[a, i, j, k, l])
                lead[a, i, j] = 0.5 * acc

        for u in range(n):
            acc = 0.0
            for l in range(n):
                acc += gamma[a, l, l, u]
            gt[u] = acc
        for l in range(n):
            acc = 0.0
            for u in range(n):
                acc += df[a, u, u, l]
            dfc[l] = acc

        for i in range(n):
            for j in range(n):
                acc = 0.0
                for u in range(n):
                    acc += gamma[a, u, i, j] * gt[u]
                    for l in range(n):
                        acc -= gamma[a, u, i, l] * gamma[a, l, j, u]
                t3 = 0.0
                for l in range(n):
                    t3 += dfc[l] * (dg[a, i, l, j] + dg[a, j, l, i] - dg[a, l, i, j])
                t4 = 0.0
                for u in range(n):
                    for l in range(n):
                        t4 += df[a, i, u, l] * (dg[a, u, l, j] + dg[a, j, l, u]
                                                - dg[a, l, u, j])
                qric[a, i, j] = acc + 0.5 * t3 - 0.5 * t4

        s = 0.0
        for i in range(n):
            for j in range(n):
                s += ginv[a, i, j] * (lead[a, i, j] + qric[a, i, j])
        scal[a] = s

        s = 0.0
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(n):
                        s += (df[a, i, i, j] * ginv[a, k, l]
                              + ginv[a, i, j] * df[a, i, k, l]
                              - df[a, i, i, k] * ginv[a, j, l]
                              - ginv[a, i, k] * df[a, i, j, l]) * dg[a, k, j, l]
                        s += (ginv[a, i, j] * ginv[a, k, l]
                              - ginv[a, i, k] * ginv[a, j, l]) * d2g[a, i, k, j, l]
        divv[a] = s

    return lead_arr, qric_arr, scal_arr, divv_arr
