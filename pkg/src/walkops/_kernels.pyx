# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot kernels for the convolution engines.

The generic (keyed-support) convolution engine spends essentially all of
its time scattering products back into an accumulator indexed by interned
element ids.  These loops are kept free of any Python-object traffic; the
pure-python twin in ``_kernels_py`` has identical semantics (including
summation order, so results are bit-for-bit equal).
"""

BACKEND = "compiled"


def scatter_add(double[::1] acc, long long[::1] idx, double[::1] vals):
    """acc[idx[i]] += vals[i], sequentially in index order."""
    cdef Py_ssize_t i, n = idx.shape[0]
    for i in range(n):
        acc[idx[i]] += vals[i]


def scatter_add_outer(double[::1] acc, long long[:, ::1] rows,
                      double[::1] level_vals, double[::1] mu_vals):
    """acc[rows[i, j]] += level_vals[i] * mu_vals[j] without materializing
    the outer product."""
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t m = rows.shape[1]
    cdef double v
    for i in range(n):
        v = level_vals[i]
        for j in range(m):
            acc[rows[i, j]] += v * mu_vals[j]
