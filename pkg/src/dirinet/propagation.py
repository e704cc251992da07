"""Signal estimation at unobserved nodes by Dirichlet-energy descent.

Observed values act as Dirichlet boundary conditions.  The iterative
path repeats the update x <- T x with observed rows reset after every
sweep, where T is the degree-normalized transition matrix; the
closed-form path solves the stationarity system P_uu x_u = -P_uo x_o
directly and serves as the oracle for the iterative one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from . import backend
from .errors import InputError, UnreachableNodesWarning
from .graph import (
    NodePartition,
    WeightedDigraph,
    energy_operator,
    partition_blocks,
    transition_coupled,
    transition_decoupled,
)

_INITS = ("zeros", "observed_mean", "random")
_MODES = ("coupled", "decoupled")


@dataclass(frozen=True)
class PropagationConfig:
    """Sweep budget, stopping rule, and initialization policy.

    init="observed_mean" is the default: it is deterministic and keeps
    every iterate inside the observed value range (maximum principle).
    init="random" draws uniformly from that range using `seed`.
    v_ref (per-node reference speeds, mph) is only consulted in
    decoupled mode.
    """

    max_iters: int = 90
    tol: float = 1e-6
    mode: str = "coupled"
    init: str = "observed_mean"
    seed: int | None = None
    v_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InputError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise InputError(f"tolerance must be >= 0, got {self.tol}")
        if self.mode not in _MODES:
            raise InputError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.init not in _INITS:
            raise InputError(f"init must be one of {_INITS}, got {self.init!r}")


def dirichlet_energy(g: WeightedDigraph, x: np.ndarray) -> float:
    """Directed Dirichlet energy 1/2 sum_ij A_ij (x_i - x_j)^2."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.n_nodes,):
        raise InputError(f"signal shape {x.shape} does not match {g.n_nodes} nodes")
    val = 0.5 * float(x @ (energy_operator(g) @ x))
    # quadratic form is PSD; clamp away negative rounding noise
    return max(val, 0.0)


def unreachable_unobserved(g: WeightedDigraph, part: NodePartition) -> np.ndarray:
    """Unobserved nodes with no undirected path (in A + A^T) to any observed node."""
    if part.unobserved.size == 0:
        return part.unobserved
    _, labels = connected_components(g.adjacency + g.adjacency_t, directed=False)
    obs_comps = np.unique(labels[part.observed])
    bad = ~np.isin(labels[part.unobserved], obs_comps)
    return part.unobserved[bad]


def _check_observed(part: NodePartition, x_obs: np.ndarray) -> np.ndarray:
    x_obs = np.asarray(x_obs, dtype=np.float64)
    if x_obs.shape[0] != part.observed.size:
        raise InputError(
            f"observed signal has {x_obs.shape[0]} rows, partition has "
            f"{part.observed.size} observed nodes"
        )
    if not np.all(np.isfinite(x_obs)):
        raise InputError("observed signal contains non-finite values")
    return x_obs


def _initial_state(n: int, part: NodePartition, x_obs: np.ndarray, cfg: PropagationConfig):
    shape = (n,) + x_obs.shape[1:]
    if cfg.init == "zeros":
        x0 = np.zeros(shape)
    elif cfg.init == "observed_mean":
        x0 = np.broadcast_to(x_obs.mean(axis=0), shape).copy()
    else:
        rng = np.random.default_rng(cfg.seed)
        lo, hi = x_obs.min(axis=0), x_obs.max(axis=0)
        x0 = rng.uniform(np.broadcast_to(lo, shape), np.broadcast_to(hi, shape))
    x0[part.observed] = x_obs
    return x0


def _run(matrix, g, part, x_obs, cfg, x_init, warn=True):
    if warn:
        bad = unreachable_unobserved(g, part)
        if bad.size:
            names = [g.node_ids[i] for i in bad[:8]]
            warnings.warn(
                f"{bad.size} unobserved node(s) unreachable from the observed "
                f"set stay at their initialization (indices {bad.tolist()}, "
                f"ids {names}{'...' if bad.size > 8 else ''})",
                UnreachableNodesWarning,
                stacklevel=3,
            )
    if x_init is None:
        x0 = _initial_state(g.n_nodes, part, x_obs, cfg)
    else:
        x0 = np.array(x_init, dtype=np.float64, copy=True)
        if x0.shape != (g.n_nodes,) + x_obs.shape[1:]:
            raise InputError(
                f"x_init shape {x0.shape} does not match graph/signal shapes"
            )
        x0[part.observed] = x_obs
    return backend.run_sweeps(
        matrix, x0, part.observed, x_obs, cfg.max_iters, cfg.tol
    )


def propagate(
    g: WeightedDigraph,
    part: NodePartition,
    x_obs: np.ndarray,
    cfg: PropagationConfig | None = None,
    x_init: np.ndarray | None = None,
):
    """Iterative energy minimizer with the coupled transition matrix.

    x_obs may be a length-|O| vector or an |O| x F matrix (channels are
    propagated jointly; the stopping rule uses the max-abs change over
    all entries).  Returns (x_full, iters_used, final_residual); the
    observed rows of x_full equal x_obs bit for bit.  x_init overrides
    the configured initialization (used to inspect individual sweeps).
    """
    cfg = cfg or PropagationConfig()
    x_obs = _check_observed(part, x_obs)
    return _run(transition_coupled(g).matrix, g, part, x_obs, cfg, x_init)


def propagate_closed_form(
    g: WeightedDigraph, part: NodePartition, x_obs: np.ndarray
) -> np.ndarray:
    """Exact minimizer via the stationarity system P_uu x_u = -P_uo x_o.

    Requires every unobserved node to have an undirected route to some
    observed node; otherwise P_uu is singular and the offending nodes
    are reported.
    """
    x_obs = _check_observed(part, x_obs)
    n = g.n_nodes
    x = np.empty((n,) + x_obs.shape[1:], dtype=np.float64)
    x[part.observed] = x_obs
    if part.unobserved.size == 0:
        return x
    bad = unreachable_unobserved(g, part)
    if bad.size:
        raise InputError(
            "energy minimizer is not unique: unobserved node(s) with no "
            f"route to any observed node: indices {bad.tolist()} "
            f"(ids {[g.node_ids[i] for i in bad]})"
        )
    p_uo, p_uu = partition_blocks(g, part)
    rhs = -(p_uo @ x_obs)
    x[part.unobserved] = splu(p_uu.tocsc()).solve(rhs)
    return x


def propagate_decoupled(
    g: WeightedDigraph,
    part: NodePartition,
    x_obs: np.ndarray,
    cfg: PropagationConfig,
):
    """Direction-aware propagation of congestion and free-flow parts.

    The observed signal splits against the per-node reference speed
    v_ref into deviations: a congestion deficit max(v_ref - x, 0) and a
    free-flow excess max(x - v_ref, 0), so x = v_ref + excess - deficit
    holds exactly at observed nodes.  The deficit propagates with the
    congestion-branch transition (along edge direction, i.e. upstream
    against traffic), the excess with the free-flow branch; both branch
    operators are substochastic, so deviations fade with distance and
    far-from-data estimates relax to the reference field.  The
    recombination v_ref + excess - deficit is clamped to [0, max(v_ref)]
    and the observed rows are restored exactly.  Experimental
    standalone mode.
    """
    if cfg.v_ref is None:
        raise InputError("decoupled mode requires reference speeds (v_ref)")
    v_ref = np.asarray(cfg.v_ref, dtype=np.float64)
    if v_ref.shape != (g.n_nodes,):
        raise InputError(
            f"v_ref shape {v_ref.shape} does not match {g.n_nodes} nodes"
        )
    if not np.all(np.isfinite(v_ref)) or np.any(v_ref <= 0):
        raise InputError("v_ref must be finite and positive")
    x_obs = _check_observed(part, x_obs)
    if x_obs.ndim != 1:
        raise InputError("decoupled mode handles one signal channel at a time")

    vr_obs = v_ref[part.observed]
    excess_obs = np.maximum(x_obs - vr_obs, 0.0)
    deficit_obs = np.maximum(vr_obs - x_obs, 0.0)
    t_cog, t_free = transition_decoupled(g)
    excess, it_f, res_f = _run(t_free.matrix, g, part, excess_obs, cfg, None)
    deficit, it_c, res_c = _run(t_cog.matrix, g, part, deficit_obs, cfg, None, warn=False)
    x = np.clip(v_ref + excess - deficit, 0.0, float(v_ref.max()))
    x[part.observed] = x_obs
    return x, max(it_f, it_c), max(res_f, res_c)


def reference_speeds(values: np.ndarray, percentile: float = 85.0) -> np.ndarray:
    """Per-node reference speed: the given percentile of each node's history.

    values is T x N in mph with missing entries as NaN.  Nodes with no
    measurements at all fall back to the network-wide percentile.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise InputError(f"expected a T x N matrix, got shape {values.shape}")
    finite = np.isfinite(values)
    if not finite.any():
        raise InputError("no measured values to derive reference speeds from")
    network = float(np.percentile(values[finite], percentile))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        per_node = np.nanpercentile(values, percentile, axis=0)
    per_node[~np.isfinite(per_node)] = network
    return per_node
