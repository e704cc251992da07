"""Pure-Python (numpy/scipy) fallback for the compiled sweep kernels.

Function signatures are identical to :mod:`dirinet._core`; the backend
module picks one of the two at import time.  All matrices arrive as raw
CSR component arrays (int32 indptr/indices, float64 data) so that both
backends share a single calling convention.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

BACKEND = "python"


def _as_csr(indptr, indices, data, n_rows, n_cols):
    return sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))


def csr_matmat(indptr, indices, data, n_cols, x, out=None):
    """out = M @ x for CSR M with the given component arrays."""
    n_rows = len(indptr) - 1
    m = _as_csr(indptr, indices, data, n_rows, n_cols)
    res = m @ x
    if out is None:
        return np.ascontiguousarray(res)
    np.copyto(out, res)
    return out


def propagate_sweeps(indptr, indices, data, x0, obs_idx, obs_vals, max_iters, tol):
    """Iterate x <- M x with observed rows reset after every sweep.

    x0 must already carry obs_vals in its observed rows.  Returns
    (x_final, iters_used, final_residual) where the residual is the
    max-abs change of the last sweep.
    """
    n = len(indptr) - 1
    m = _as_csr(indptr, indices, data, n, n)
    x = np.array(x0, dtype=np.float64, copy=True)
    resid = 0.0
    iters = 0
    for iters in range(1, max_iters + 1):
        nxt = m @ x
        nxt[obs_idx] = obs_vals
        resid = float(np.max(np.abs(nxt - x))) if x.size else 0.0
        x = nxt
        if resid <= tol:
            break
    return x, iters, resid


def sweep_gradient(indptr_t, indices_t, data_t, grad_out, obs_idx, iters):
    """Reverse accumulation through `iters` sweeps of propagate_sweeps.

    The sweep map is linear in the observed boundary values, so the
    backward pass is `iters` multiplications by the transposed
    transition matrix with observed rows zeroed, collecting the gradient
    w.r.t. the boundary at every reset point.
    """
    n = len(indptr_t) - 1
    mt = _as_csr(indptr_t, indices_t, data_t, n, n)
    g = np.array(grad_out, dtype=np.float64, copy=True)
    gc = np.zeros((len(obs_idx),) + g.shape[1:], dtype=np.float64)
    for _ in range(iters):
        gc += g[obs_idx]
        g[obs_idx] = 0.0
        g = mt @ g
    gc += g[obs_idx]
    return gc
