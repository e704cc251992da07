"""Kernel backend selection and the canonical calling convention.

The hot loops (CSR products, boundary-reset sweep iterations and their
transposed gradient accumulation) exist twice: a Cython extension
(:mod:`dirinet._core`) and a numpy/scipy fallback (:mod:`dirinet._corepy`).
The compiled core is used when present; set ``DIRINET_PURE_PY=1`` to force
the fallback (the benchmark suite compares the two).

All public helpers here accept scipy CSR matrices plus numpy arrays and
normalize them to the shared raw-array convention: int32 index arrays,
C-contiguous float64 values.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

if os.environ.get("DIRINET_PURE_PY"):
    from . import _corepy as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _corepy as _impl

BACKEND = _impl.BACKEND


def csr_components(m: sp.csr_matrix):
    """Canonical (indptr, indices, data) triple for kernel calls."""
    indptr = np.ascontiguousarray(m.indptr, dtype=np.int32)
    indices = np.ascontiguousarray(m.indices, dtype=np.int32)
    data = np.ascontiguousarray(m.data, dtype=np.float64)
    return indptr, indices, data


def _as_matrix(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.ascontiguousarray(x.reshape(-1, 1)), True
    return np.ascontiguousarray(x), False


def spmm(m: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """M @ x through the selected kernel; x may be a vector or a matrix."""
    x2, squeeze = _as_matrix(x)
    indptr, indices, data = csr_components(m)
    out = _impl.csr_matmat(indptr, indices, data, m.shape[1], x2)
    return out[:, 0] if squeeze else out


def run_sweeps(
    m: sp.csr_matrix,
    x0: np.ndarray,
    obs_idx: np.ndarray,
    obs_vals: np.ndarray,
    max_iters: int,
    tol: float,
):
    """Fused sweep loop x <- M x with observed-row resets.

    Returns (x_final, iters_used, final_residual) with x_final shaped
    like x0.
    """
    x2, squeeze = _as_matrix(x0)
    vals2, _ = _as_matrix(obs_vals)
    obs = np.ascontiguousarray(obs_idx, dtype=np.int32)
    indptr, indices, data = csr_components(m)
    out, iters, resid = _impl.propagate_sweeps(
        indptr, indices, data, x2, obs, vals2, int(max_iters), float(tol)
    )
    return (out[:, 0] if squeeze else out), iters, resid


def run_sweeps_gradient(
    m_t: sp.csr_matrix,
    grad_out: np.ndarray,
    obs_idx: np.ndarray,
    iters: int,
) -> np.ndarray:
    """Gradient of the sweep loop's output w.r.t. the boundary values.

    m_t must be the transpose (as CSR) of the matrix the forward sweeps
    used.
    """
    g2, squeeze = _as_matrix(grad_out)
    obs = np.ascontiguousarray(obs_idx, dtype=np.int32)
    indptr, indices, data = csr_components(m_t)
    gc = _impl.sweep_gradient(indptr, indices, data, g2, obs, int(iters))
    return gc[:, 0] if squeeze else gc
