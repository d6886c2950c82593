# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Feynman-Kac block kernel for the standard bump potential.

Accumulates the trapezoid time integral of the pair potential along each
path without materializing the positions array.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def fk_block_bump(double[:, ::1] x0, double[:, :, :, ::1] incr, double dt,
                  long[:, ::1] pairs, double beta, double eps, double norm):
    cdef Py_ssize_t nsteps = incr.shape[0]
    cdef Py_ssize_t npaths = incr.shape[1]
    cdef Py_ssize_t n = incr.shape[2]
    cdef Py_ssize_t npairs = pairs.shape[0]
    cdef Py_ssize_t p, s, i, k, a, b
    cdef double inv_e2 = 1.0 / (eps * eps)
    cdef double scale = beta * norm * inv_e2
    cdef double acc, v, dx, dy, r2
    cdef double[:, ::1] pos = np.empty((n, 2))
    expo_arr = np.empty(npaths)
    end_arr = np.empty((npaths, n, 2))
    cdef double[::1] expo = expo_arr
    cdef double[:, :, ::1] end = end_arr

    with nogil:
        for p in range(npaths):
            for i in range(n):
                pos[i, 0] = x0[i, 0]
                pos[i, 1] = x0[i, 1]
            acc = 0.0
            for s in range(nsteps + 1):
                if s > 0:
                    for i in range(n):
                        pos[i, 0] += incr[s - 1, p, i, 0]
                        pos[i, 1] += incr[s - 1, p, i, 1]
                v = 0.0
                for k in range(npairs):
                    a = pairs[k, 0]
                    b = pairs[k, 1]
                    dx = pos[a, 0] - pos[b, 0]
                    dy = pos[a, 1] - pos[b, 1]
                    r2 = (dx * dx + dy * dy) * inv_e2
                    if r2 < 1.0:
                        v += exp(-1.0 / (1.0 - r2))
                if s == 0 or s == nsteps:
                    acc += 0.5 * v
                else:
                    acc += v
            expo[p] = dt * scale * acc
            for i in range(n):
                end[p, i, 0] = pos[i, 0]
                end[p, i, 1] = pos[i, 1]
    return expo_arr, end_arr
