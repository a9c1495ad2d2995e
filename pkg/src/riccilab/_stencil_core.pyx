# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled periodic finite-difference kernels.

Hot inner loops of the grid calculus: fourth-order centred first and
second derivative stencils with periodic wraparound, applied along the
middle axis of a (pre, n, post) view.  The pure-numpy fallback in
``_stencil_numpy`` implements the identical arithmetic.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def diff1_axis(double[:, :, ::1] a, double h):
    """Fourth-order first derivative along the middle axis, periodic."""
    cdef Py_ssize_t npre = a.shape[0]
    cdef Py_ssize_t n = a.shape[1]
    cdef Py_ssize_t npost = a.shape[2]
    cdef double w = 1.0 / (12.0 * h)
    out_arr = np.empty((npre, n, npost), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, i, q, im1, im2, ip1, ip2
    with nogil:
        for p in range(npre):
            for i in range(n):
                im1 = i - 1 if i >= 1 else n - 1
                im2 = i - 2 if i >= 2 else i + n - 2
                ip1 = i + 1 if i + 1 < n else 0
                ip2 = i + 2 if i + 2 < n else i + 2 - n
                for q in range(npost):
                    # grouped as symmetric differences: constants cancel exactly
                    out[p, i, q] = w * (
                        8.0 * (a[p, ip1, q] - a[p, im1, q])
                        - (a[p, ip2, q] - a[p, im2, q])
                    )
    return out_arr


def diff2_axis(double[:, :, ::1] a, double h):
    """Fourth-order second derivative along the middle axis, periodic."""
    cdef Py_ssize_t npre = a.shape[0]
    cdef Py_ssize_t n = a.shape[1]
    cdef Py_ssize_t npost = a.shape[2]
    cdef double w = 1.0 / (12.0 * h * h)
    out_arr = np.empty((npre, n, npost), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, i, q, im1, im2, ip1, ip2
    with nogil:
        for p in range(npre):
            for i in range(n):
                im1 = i - 1 if i >= 1 else n - 1
                im2 = i - 2 if i >= 2 else i + n - 2
                ip1 = i + 1 if i + 1 < n else 0
                ip2 = i + 2 if i + 2 < n else i + 2 - n
                for q in range(npost):
                    # grouped as symmetric sums: constants cancel exactly
                    out[p, i, q] = w * (
                        16.0 * (a[p, ip1, q] + a[p, im1, q])
                        - (a[p, ip2, q] + a[p, im2, q])
                        - 30.0 * a[p, i, q]
                    )
    return out_arr
