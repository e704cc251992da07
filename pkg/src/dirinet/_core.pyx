# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sweep kernels: CSR products and fused boundary-reset iterations.

Inputs are canonicalized by :mod:`dirinet.backend` (int32 index arrays,
C-contiguous float64 matrices) before reaching these functions.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


cdef void _matmat(const int[::1] indptr, const int[::1] indices,
                  const double[::1] data, const double[:, ::1] x,
                  double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_feat = x.shape[1]
    cdef Py_ssize_t i, k, f, j
    cdef double w
    for i in range(n_rows):
        for f in range(n_feat):
            out[i, f] = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            w = data[k]
            for f in range(n_feat):
                out[i, f] += w * x[j, f]


def csr_matmat(indptr, indices, data, n_cols, x, out=None):
    """out = M @ x for CSR M with the given component arrays."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] res
    if out is None:
        res = np.empty((len(indptr) - 1, x.shape[1]), dtype=np.float64)
    else:
        res = out
    _matmat(indptr, indices, data, x, res)
    return res


def propagate_sweeps(indptr, indices, data, x0, obs_idx, obs_vals,
                     int max_iters, double tol):
    """Iterate x <- M x with observed rows reset after every sweep.

    Returns (x_final, iters_used, final_residual); the residual is the
    max-abs change of the last sweep.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] cur = np.array(
        x0, dtype=np.float64, copy=True, order="C")
    cdef cnp.ndarray[double, ndim=2, mode="c"] nxt = np.empty_like(cur)
    cdef const int[::1] ip = indptr
    cdef const int[::1] ix = indices
    cdef const double[::1] dv = data
    cdef const int[::1] obs = obs_idx
    cdef const double[:, ::1] bvals = obs_vals
    cdef double[:, ::1] a = cur
    cdef double[:, ::1] b = nxt
    cdef double[:, ::1] tmp
    cdef Py_ssize_t n_feat = cur.shape[1]
    cdef Py_ssize_t n_obs = obs.shape[0]
    cdef Py_ssize_t i, f, it
    cdef int iters = 0
    cdef double resid = 0.0, diff
    cdef bint flipped = 0

    if cur.shape[0] == 0 or n_feat == 0 or max_iters <= 0:
        return cur, 0, 0.0

    with nogil:
        for it in range(max_iters):
            _matmat(ip, ix, dv, a, b)
            for i in range(n_obs):
                for f in range(n_feat):
                    b[obs[i], f] = bvals[i, f]
            resid = 0.0
            for i in range(a.shape[0]):
                for f in range(n_feat):
                    diff = b[i, f] - a[i, f]
                    if diff < 0.0:
                        diff = -diff
                    if diff > resid:
                        resid = diff
            tmp = a
            a = b
            b = tmp
            flipped = not flipped
            iters = iters + 1
            if resid <= tol:
                break

    return (nxt if flipped else cur), iters, resid


def sweep_gradient(indptr_t, indices_t, data_t, grad_out, obs_idx, int iters):
    """Reverse accumulation through `iters` sweeps of propagate_sweeps."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] g = np.array(
        grad_out, dtype=np.float64, copy=True, order="C")
    cdef cnp.ndarray[double, ndim=2, mode="c"] work = np.empty_like(g)
    cdef cnp.ndarray[double, ndim=2, mode="c"] gc = np.zeros(
        (len(obs_idx), g.shape[1]), dtype=np.float64)
    cdef const int[::1] ip = indptr_t
    cdef const int[::1] ix = indices_t
    cdef const double[::1] dv = data_t
    cdef const int[::1] obs = obs_idx
    cdef double[:, ::1] ga = g
    cdef double[:, ::1] gb = work
    cdef double[:, ::1] acc = gc
    cdef double[:, ::1] tmp
    cdef Py_ssize_t n_feat = g.shape[1]
    cdef Py_ssize_t n_obs = obs.shape[0]
    cdef Py_ssize_t i, f, it

    with nogil:
        for it in range(iters):
            for i in range(n_obs):
                for f in range(n_feat):
                    acc[i, f] += ga[obs[i], f]
                    ga[obs[i], f] = 0.0
            _matmat(ip, ix, dv, ga, gb)
            tmp = ga
            ga = gb
            gb = tmp
        for i in range(n_obs):
            for f in range(n_feat):
                acc[i, f] += ga[obs[i], f]

    return gc
