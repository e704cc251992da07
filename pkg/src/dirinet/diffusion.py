"""Truncated graph-diffusion convolution operators.

A kernel is the weighted sum of transition-matrix powers
S = sum_{k=1}^{k_max} alpha (1-alpha)^k T^k.  The k = 0 identity term
is excluded on purpose: a node's own features re-enter through the
residual connection of the model, not through S.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import backend
from .errors import InputError
from .graph import TransitionMatrix, WeightedDigraph, transition_decoupled

DEFAULT_ALPHA = 0.1
DEFAULT_K_MAX = 3


@dataclass(frozen=True)
class DiffusionKernel:
    """Immutable diffusion operator built from one transition branch."""

    alpha: float
    k_max: int
    branch: str
    matrix: sp.csr_matrix

    @property
    def matrix_t(self) -> sp.csr_matrix:
        cache = self.__dict__.setdefault("_matrix_t_cache", {})
        if "t" not in cache:
            t = sp.csr_matrix(self.matrix.T)
            t.sort_indices()
            cache["t"] = t
        return cache["t"]


def coefficient(alpha: float, k: int) -> float:
    """Influence weight of the k-hop term, alpha (1-alpha)^k."""
    return alpha * (1.0 - alpha) ** k


def build_kernel(
    t: TransitionMatrix, alpha: float = DEFAULT_ALPHA, k_max: int = DEFAULT_K_MAX
) -> DiffusionKernel:
    """S = sum_{k=1}^{k_max} alpha (1-alpha)^k T^k (k starts at 1)."""
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if k_max < 1:
        raise InputError(f"k_max must be >= 1, got {k_max}")
    power = t.matrix
    s = coefficient(alpha, 1) * power
    for k in range(2, k_max + 1):
        power = power @ t.matrix
        s = s + coefficient(alpha, k) * power
    s = sp.csr_matrix(s)
    s.sort_indices()
    s.eliminate_zeros()
    return DiffusionKernel(float(alpha), int(k_max), t.kind, s)


def kernel_pair(
    g: WeightedDigraph, alpha: float = DEFAULT_ALPHA, k_max: int = DEFAULT_K_MAX
) -> tuple[DiffusionKernel, DiffusionKernel]:
    """(S_cog, S_free) built from the graph's decoupled transitions.

    Cached per graph and (alpha, k_max): the model reuses the pair on
    every window and training batch.
    """
    key = ("kernels", float(alpha), int(k_max))
    if key not in g._cache:
        t_cog, t_free = transition_decoupled(g)
        g._cache[key] = (
            build_kernel(t_cog, alpha, k_max),
            build_kernel(t_free, alpha, k_max),
        )
    return g._cache[key]


def diffuse(kernel: DiffusionKernel, x: np.ndarray) -> np.ndarray:
    """S @ x for a vector or feature matrix x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != kernel.matrix.shape[1]:
        raise InputError(
            f"feature rows {x.shape[0]} do not match kernel size "
            f"{kernel.matrix.shape[1]}"
        )
    return backend.spmm(kernel.matrix, x)
