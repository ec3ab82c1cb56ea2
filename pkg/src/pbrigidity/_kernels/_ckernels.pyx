# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: winding-number preimage counting and equal-key labeling."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()


cdef inline double _is_left(double x0, double y0, double x1, double y1,
                            double px, double py) nogil:
    return (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)


cdef inline int _winding(const double* qx, const double* qy,
                         double px, double py) nogil:
    cdef int wn = 0
    cdef int e, f
    for e in range(4):
        f = (e + 1) & 3
        if qy[e] <= py:
            if qy[f] > py and _is_left(qx[e], qy[e], qx[f], qy[f], px, py) > 0:
                wn += 1
        elif qy[f] <= py and _is_left(qx[e], qy[e], qx[f], qy[f], px, py) < 0:
            wn -= 1
    return wn


def count_preimages(const double[:, ::1] fq, const double[:, ::1] gq,
                    double u0, double du, Py_ssize_t nu,
                    double v0, double dv, Py_ssize_t nv,
                    double offset=0.5):
    """Count, per value sample, the quads whose winding number about it is nonzero.

    ``fq``/``gq`` hold the four corner values of each quad, shape ``(m, 4)``.
    Sample ``(a, b)`` sits at ``(u0 + (a + offset) du, v0 + (b + offset) dv)``.
    Returns ``(counts, n_degenerate)``; quads with zero signed area are skipped.
    """
    cdef Py_ssize_t m = fq.shape[0]
    counts_arr = np.zeros((nu, nv), dtype=np.int32)
    cdef int[:, ::1] counts = counts_arr
    cdef Py_ssize_t c, a, b, a0, a1, b0, b1
    cdef double qx[4]
    cdef double qy[4]
    cdef double fmin, fmax, gmin, gmax, area, px, py
    cdef long degenerate = 0
    cdef int k
    with nogil:
        for c in range(m):
            for k in range(4):
                qx[k] = fq[c, k]
                qy[k] = gq[c, k]
            area = ((qx[0] - qx[2]) * (qy[1] - qy[3]) - (qx[1] - qx[3]) * (qy[0] - qy[2]))
            if area == 0.0:
                degenerate += 1
                continue
            fmin = qx[0]; fmax = qx[0]; gmin = qy[0]; gmax = qy[0]
            for k in range(1, 4):
                if qx[k] < fmin: fmin = qx[k]
                if qx[k] > fmax: fmax = qx[k]
                if qy[k] < gmin: gmin = qy[k]
                if qy[k] > gmax: gmax = qy[k]
            a0 = <Py_ssize_t>ceil((fmin - u0) / du - offset)
            a1 = <Py_ssize_t>floor((fmax - u0) / du - offset)
            b0 = <Py_ssize_t>ceil((gmin - v0) / dv - offset)
            b1 = <Py_ssize_t>floor((gmax - v0) / dv - offset)
            if a0 < 0: a0 = 0
            if b0 < 0: b0 = 0
            if a1 > nu - 1: a1 = nu - 1
            if b1 > nv - 1: b1 = nv - 1
            for a in range(a0, a1 + 1):
                px = u0 + (a + offset) * du
                for b in range(b0, b1 + 1):
                    py = v0 + (b + offset) * dv
                    if _winding(qx, qy, px, py) != 0:
                        counts[a, b] += 1
    return counts_arr, int(degenerate)


def label_equal_keys(const long long[:, ::1] keys, bint periodic_x, bint periodic_y):
    """4-connected labeling of cells sharing the same nonnegative key.

    Labels are numbered by the C-order position of each component's first
    cell; cells with negative key get label -1.
    """
    cdef Py_ssize_t nx = keys.shape[0], ny = keys.shape[1]
    labels_arr = np.full((nx, ny), -1, dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    stack_arr = np.empty(nx * ny, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t i, j, top, cur, ci, cj, ni, nj, d
    cdef long long key
    cdef int nlab = 0
    cdef Py_ssize_t di[4]
    cdef Py_ssize_t dj[4]
    di[0] = 1; dj[0] = 0
    di[1] = -1; dj[1] = 0
    di[2] = 0; dj[2] = 1
    di[3] = 0; dj[3] = -1
    with nogil:
        for i in range(nx):
            for j in range(ny):
                if keys[i, j] < 0 or labels[i, j] >= 0:
                    continue
                key = keys[i, j]
                labels[i, j] = nlab
                top = 0
                stack[top] = i * ny + j
                top += 1
                while top > 0:
                    top -= 1
                    cur = stack[top]
                    ci = cur // ny
                    cj = cur - ci * ny
                    for d in range(4):
                        ni = ci + di[d]
                        nj = cj + dj[d]
                        if ni < 0 or ni >= nx:
                            if not periodic_x:
                                continue
                            ni = (ni + nx) % nx
                        if nj < 0 or nj >= ny:
                            if not periodic_y:
                                continue
                            nj = (nj + ny) % ny
                        if labels[ni, nj] < 0 and keys[ni, nj] == key:
                            labels[ni, nj] = nlab
                            stack[top] = ni * ny + nj
                            top += 1
                nlab += 1
    return labels_arr, nlab
