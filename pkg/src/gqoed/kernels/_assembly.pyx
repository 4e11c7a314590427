# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled P1 element kernels; same contracts as ``_fallback``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def diffusion_reaction_data(const double[::1] areas, const double[:, :, ::1] grads,
                            const double[::1] diff, const double[::1] react,
                            const long[:, ::1] scatter, Py_ssize_t nnz):
    cdef Py_ssize_t ne = areas.shape[0]
    cdef Py_ssize_t e, a, b
    cdef double ka, ma, g
    out = np.zeros(nnz, dtype=np.float64)
    cdef double[::1] data = out
    for e in range(ne):
        ka = diff[e] * areas[e]
        ma = react[e] * areas[e] / 12.0
        for a in range(3):
            for b in range(3):
                g = grads[e, a, 0] * grads[e, b, 0] + grads[e, a, 1] * grads[e, b, 1]
                if a == b:
                    data[scatter[e, 3 * a + b]] += ka * g + 2.0 * ma
                else:
                    data[scatter[e, 3 * a + b]] += ka * g + ma
    return out


def advection_data(const double[::1] areas, const double[:, :, ::1] grads,
                   const double[:, ::1] vel, const long[:, ::1] scatter,
                   Py_ssize_t nnz, bint conservative):
    cdef Py_ssize_t ne = areas.shape[0]
    cdef Py_ssize_t e, a, b
    cdef double vg[3]
    cdef double w
    out = np.zeros(nnz, dtype=np.float64)
    cdef double[::1] data = out
    for e in range(ne):
        w = areas[e] / 3.0
        for a in range(3):
            vg[a] = w * (vel[e, 0] * grads[e, a, 0] + vel[e, 1] * grads[e, a, 1])
        for a in range(3):
            for b in range(3):
                if conservative:
                    data[scatter[e, 3 * a + b]] += vg[a]
                else:
                    data[scatter[e, 3 * a + b]] += vg[b]
    return out


def element_gradients(const long[:, ::1] elements, const double[:, :, ::1] grads,
                      const double[::1] u):
    cdef Py_ssize_t ne = elements.shape[0]
    cdef Py_ssize_t e, a
    cdef double ua
    out = np.zeros((ne, 2), dtype=np.float64)
    cdef double[:, ::1] g = out
    for e in range(ne):
        for a in range(3):
            ua = u[elements[e, a]]
            g[e, 0] += ua * grads[e, a, 0]
            g[e, 1] += ua * grads[e, a, 1]
    return out
