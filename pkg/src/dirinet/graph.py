"""Directed weighted sensor graph: construction, degrees, transition matrices.

Edge weights come from a Gaussian kernel of pairwise travel distances,
with an optional hard distance threshold applied before kernel
evaluation.  The graph is immutable after construction; derived
operators (transition matrices, energy operator) are cached on it.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import arrayio
from .errors import InputError, IsolatedNodesWarning, ProtocolError

GRAPH_FORMAT = "GRAPH1"


def _canon_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    m.sort_indices()
    m.eliminate_zeros()
    return m


@dataclass(eq=False)
class WeightedDigraph:
    """Sparse directed graph over an ordered sensor-id universe.

    adjacency holds the kernel weights A (row i = edges leaving node i);
    the transpose is materialized once so column access stays row-major.
    """

    node_ids: list[str]
    adjacency: sp.csr_matrix
    adjacency_t: sp.csr_matrix
    out_degree: np.ndarray
    in_degree: np.ndarray
    _index: dict[str, int] = field(repr=False, default_factory=dict)
    _cache: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._index:
            self._index = {nid: i for i, nid in enumerate(self.node_ids)}

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def total_degree(self) -> np.ndarray:
        return self.out_degree + self.in_degree

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise InputError(f"unknown sensor id {node_id!r}") from None

    @classmethod
    def from_adjacency(cls, node_ids, adjacency) -> "WeightedDigraph":
        adjacency = _canon_csr(adjacency)
        n = len(node_ids)
        if adjacency.shape != (n, n):
            raise InputError(
                f"adjacency shape {adjacency.shape} does not match {n} node ids"
            )
        if adjacency.nnz and (
            not np.all(np.isfinite(adjacency.data)) or adjacency.data.min() < 0
        ):
            raise InputError("edge weights must be finite and nonnegative")
        adjacency.setdiag(0.0)
        adjacency.eliminate_zeros()
        adj_t = _canon_csr(adjacency.T)
        out_deg = np.asarray(adjacency.sum(axis=1)).ravel()
        in_deg = np.asarray(adjacency.sum(axis=0)).ravel()
        return cls(list(node_ids), adjacency, adj_t, out_deg, in_deg)


@dataclass(frozen=True)
class NodePartition:
    """Observed/unobserved index split with the observed-first permutation."""

    observed: np.ndarray
    unobserved: np.ndarray
    permutation: np.ndarray

    @classmethod
    def from_observed(cls, n_nodes: int, observed) -> "NodePartition":
        observed = np.unique(np.asarray(observed, dtype=np.int64))
        if observed.size == 0:
            raise ProtocolError("empty observed set")
        if observed.size and (observed[0] < 0 or observed[-1] >= n_nodes):
            raise InputError(
                f"observed indices out of range for {n_nodes}-node graph"
            )
        mask = np.zeros(n_nodes, dtype=bool)
        mask[observed] = True
        unobserved = np.nonzero(~mask)[0]
        return cls(observed, unobserved, np.concatenate([observed, unobserved]))

    @classmethod
    def from_observed_ids(cls, g: WeightedDigraph, ids) -> "NodePartition":
        return cls.from_observed(g.n_nodes, [g.index_of(i) for i in ids])

    @property
    def n_observed(self) -> int:
        return int(self.observed.size)


@dataclass(frozen=True)
class TransitionMatrix:
    """Propagation operator of a given kind (coupled/congestion/freeflow)."""

    kind: str
    matrix: sp.csr_matrix

    @property
    def matrix_t(self) -> sp.csr_matrix:
        cache = self.__dict__.setdefault("_matrix_t_cache", {})
        if "t" not in cache:
            cache["t"] = _canon_csr(self.matrix.T)
        return cache["t"]


def build_adjacency(distances, sigma="auto", kappa=None, node_ids=None) -> WeightedDigraph:
    """Gaussian-kernel adjacency from directed travel distances (meters).

    distances: iterable of (from_id, to_id, dist_meters), one entry per
    directed route.  sigma="auto" uses the population standard deviation
    of all provided distances; kappa=None disables the distance
    threshold.  node_ids fixes the node universe (and its order) so
    isolated sensors stay representable; by default the universe is the
    set of ids appearing in the distance list, in first-seen order.
    """
    entries = [(str(a), str(b), float(d)) for a, b, d in distances]
    if not entries:
        raise InputError("empty distance list")
    for a, b, d in entries:
        if not math.isfinite(d) or d < 0:
            raise InputError(f"distance {a!r}->{b!r} must be finite and >= 0, got {d}")

    if node_ids is None:
        node_ids = []
        seen = set()
        for a, b, _ in entries:
            for nid in (a, b):
                if nid not in seen:
                    seen.add(nid)
                    node_ids.append(nid)
    else:
        node_ids = [str(n) for n in node_ids]
        if len(set(node_ids)) != len(node_ids):
            raise InputError("duplicate ids in node universe")
        universe = set(node_ids)
        for a, b, _ in entries:
            for nid in (a, b):
                if nid not in universe:
                    raise InputError(f"sensor id {nid!r} missing from node universe")

    pair_seen: dict[tuple[str, str], float] = {}
    for a, b, d in entries:
        if (a, b) in pair_seen:
            raise InputError(
                f"duplicate directed pair {a!r}->{b!r} "
                f"(distances {pair_seen[(a, b)]} and {d})"
            )
        pair_seen[(a, b)] = d

    all_d = np.array([d for _, _, d in entries], dtype=np.float64)
    if sigma == "auto":
        sigma_val = float(np.std(all_d))
    else:
        sigma_val = float(sigma)
    if not math.isfinite(sigma_val) or sigma_val <= 0:
        raise InputError(f"sigma must be positive, got {sigma_val}")
    if kappa is None:
        kappa_val = math.inf
    else:
        kappa_val = float(kappa)
        if not kappa_val > 0:
            raise InputError(f"kappa must be positive, got {kappa_val}")

    index = {nid: i for i, nid in enumerate(node_ids)}
    rows, cols, weights = [], [], []
    for a, b, d in entries:
        i, j = index[a], index[b]
        if i == j or d > kappa_val:
            continue
        rows.append(i)
        cols.append(j)
        weights.append(math.exp(-(d * d) / (sigma_val * sigma_val)))
    n = len(node_ids)
    adjacency = sp.csr_matrix(
        (weights, (rows, cols)), shape=(n, n), dtype=np.float64
    )
    return WeightedDigraph.from_adjacency(node_ids, adjacency)


def _inv_total_degree(g: WeightedDigraph) -> np.ndarray:
    total = g.total_degree
    zero = total <= 0.0
    if np.any(zero):
        names = [g.node_ids[i] for i in np.nonzero(zero)[0]]
        warnings.warn(
            f"{len(names)} node(s) with zero total degree keep their "
            f"initialization during propagation: {names}",
            IsolatedNodesWarning,
            stacklevel=3,
        )
    inv = np.zeros_like(total)
    inv[~zero] = 1.0 / total[~zero]
    return inv


def _row_scale(m: sp.spmatrix, scale: np.ndarray) -> sp.csr_matrix:
    return _canon_csr(sp.diags(scale) @ m)


def transition_coupled(g: WeightedDigraph) -> TransitionMatrix:
    """Row-stochastic update operator: (D_o + D_I)^-1 (A + A^T)."""
    if "coupled" not in g._cache:
        sym = g.adjacency + g.adjacency_t
        g._cache["coupled"] = TransitionMatrix(
            "coupled", _row_scale(sym, _inv_total_degree(g))
        )
    return g._cache["coupled"]


def transition_decoupled(g: WeightedDigraph) -> tuple[TransitionMatrix, TransitionMatrix]:
    """Congestion / free-flow split of the coupled operator.

    The congestion branch (D_o + D_I)^-1 A moves information along edge
    direction (upstream relative to traffic once signals are deficits);
    the free-flow branch (D_o + D_I)^-1 A^T moves it against edge
    direction.  Their sum equals the coupled operator exactly.
    """
    if "decoupled" not in g._cache:
        inv = _inv_total_degree(g)
        g._cache["decoupled"] = (
            TransitionMatrix("congestion", _row_scale(g.adjacency, inv)),
            TransitionMatrix("freeflow", _row_scale(g.adjacency_t, inv)),
        )
    return g._cache["decoupled"]


def transition_symmetric(g: WeightedDigraph) -> TransitionMatrix:
    """Symmetric normalization (D_o+D_I)^-1/2 (A+A^T) (D_o+D_I)^-1/2.

    Optional alternative to the coupled operator; on undirected graphs
    it equals the classic D^-1/2 A D^-1/2 convolution kernel.  Not
    row-stochastic, so the maximum principle does not apply.
    """
    if "symmetric" not in g._cache:
        inv_sqrt = np.sqrt(_inv_total_degree(g))
        sym = g.adjacency + g.adjacency_t
        m = sp.diags(inv_sqrt) @ sym @ sp.diags(inv_sqrt)
        g._cache["symmetric"] = TransitionMatrix("symmetric", _canon_csr(m))
    return g._cache["symmetric"]


def energy_operator(g: WeightedDigraph) -> sp.csr_matrix:
    """Symmetric PSD operator (D_o + D_I) - (A + A^T) with zero row sums."""
    if "energy_op" not in g._cache:
        sym = g.adjacency + g.adjacency_t
        g._cache["energy_op"] = _canon_csr(sp.diags(g.total_degree) - sym)
    return g._cache["energy_op"]


def partition_blocks(g: WeightedDigraph, part: NodePartition):
    """Unobserved-row blocks (P_uo, P_uu) of the energy operator."""
    if part.observed.size == 0:
        raise ProtocolError("empty observed set")
    p = energy_operator(g)
    rows = p[part.unobserved]
    return _canon_csr(rows[:, part.observed]), _canon_csr(rows[:, part.unobserved])


def observed_subgraph(g: WeightedDigraph, observed: np.ndarray) -> WeightedDigraph:
    """Induced subgraph on the observed nodes with recomputed degrees."""
    observed = np.asarray(observed, dtype=np.int64)
    sub = g.adjacency[observed][:, observed]
    return WeightedDigraph.from_adjacency(
        [g.node_ids[i] for i in observed], sub
    )


def load_node_ids(path) -> list[str]:
    """Node-universe CSV: header `id`, one sensor per row."""
    ids = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["id"]:
            raise InputError(f"{path}: expected header 'id', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not row[0].strip():
                continue
            if len(row) != 1:
                raise InputError(f"{path}:{lineno}: expected a single id column")
            ids.append(row[0].strip())
    if not ids:
        raise InputError(f"{path}: no sensor ids")
    if len(set(ids)) != len(ids):
        raise InputError(f"{path}: duplicate sensor ids")
    return ids


def load_distances(path) -> list[tuple[str, str, float]]:
    """Distance CSV: header `from,to,dist`, one directed route per row."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["from", "to", "dist"]:
            raise InputError(f"{path}: expected header 'from,to,dist', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                d = float(row[2])
            except ValueError:
                raise InputError(
                    f"{path}:{lineno}: bad distance value {row[2]!r}"
                ) from None
            out.append((row[0].strip(), row[1].strip(), d))
    if not out:
        raise InputError(f"{path}: no distance rows")
    return out


def save_graph(path, g: WeightedDigraph, meta: dict | None = None) -> None:
    ids = np.array(g.node_ids, dtype="U")
    arrays = {
        "node_ids": ids,
        "indptr": g.adjacency.indptr.astype(np.int64),
        "indices": g.adjacency.indices.astype(np.int64),
        "weights": g.adjacency.data.astype(np.float64),
    }
    arrayio.write_archive(path, GRAPH_FORMAT, dict(meta or {}), arrays)


def load_graph(path) -> tuple[WeightedDigraph, dict]:
    try:
        meta, arrays = arrayio.read_archive(path, GRAPH_FORMAT)
    except Exception as exc:
        raise InputError(f"cannot load graph: {exc}") from exc
    node_ids = [str(x) for x in arrays["node_ids"]]
    n = len(node_ids)
    adjacency = sp.csr_matrix(
        (arrays["weights"], arrays["indices"], arrays["indptr"]), shape=(n, n)
    )
    return WeightedDigraph.from_adjacency(node_ids, adjacency), meta
