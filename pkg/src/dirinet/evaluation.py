"""Error metrics over virtual-sensor estimates and density diagnostics.

Metrics run over (node, time) entries that carry measured ground truth;
originally missing entries are excluded and counted.  MAPE additionally
skips zero-truth entries to avoid dividing by zero.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import InputError, UnreachableNodesWarning

REPORT_HEADER = (
    "vs_count,d_v2a_km,mape_pct,mae_mph,rmse_mph,n_evaluated,n_excluded"
)


@dataclass(frozen=True)
class MetricsReport:
    """Estimate-quality summary; mape is percent, mae/rmse are mph."""

    mape: float
    mae: float
    rmse: float
    n_evaluated: int
    n_excluded_missing: int
    n_zero_truth: int = 0
    d_v2a: float | None = None


def metrics(est, truth, valid_mask=None) -> MetricsReport:
    """MAPE/MAE/RMSE over the valid entries of est vs truth.

    valid_mask marks entries with measured ground truth (default: all).
    MAPE is nan when every valid entry has zero truth.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise InputError(f"shape mismatch: est {est.shape} vs truth {truth.shape}")
    if valid_mask is None:
        valid = np.ones(est.shape, dtype=bool)
    else:
        valid = np.asarray(valid_mask).astype(bool)
        if valid.shape != est.shape:
            raise InputError(f"valid_mask shape {valid.shape} does not match")
    n_eval = int(valid.sum())
    if n_eval == 0:
        raise InputError("no valid entries to evaluate")
    t = truth[valid]
    if not np.all(np.isfinite(t)):
        raise InputError("ground truth has non-finite values marked valid")
    e = est[valid]
    err = e - t
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    nonzero = t != 0.0
    n_zero = int(n_eval - nonzero.sum())
    if n_zero == n_eval:
        mape = float("nan")
    else:
        mape = float((np.abs(err[nonzero] / t[nonzero])).mean() * 100.0)
    return MetricsReport(
        mape=mape,
        mae=mae,
        rmse=rmse,
        n_evaluated=n_eval,
        n_excluded_missing=int(valid.size - n_eval),
        n_zero_truth=n_zero,
    )


def _distance_graph(rows):
    """Direct-pair lookup plus a csr distance graph over the row universe."""
    index: dict[str, int] = {}
    for frm, to, _ in rows:
        for nid in (str(frm), str(to)):
            if nid not in index:
                index[nid] = len(index)
    n = len(index)
    direct: dict[tuple[int, int], float] = {}
    coo_i, coo_j, coo_d = [], [], []
    for frm, to, dist in rows:
        d = float(dist)
        if d < 0 or not np.isfinite(d):
            raise InputError(f"bad distance {dist!r} for pair ({frm}, {to})")
        i, j = index[str(frm)], index[str(to)]
        if i == j:
            continue
        key = (i, j)
        if key in direct:
            raise InputError(f"duplicate distance pair ({frm}, {to})")
        direct[key] = d
        coo_i.append(i)
        coo_j.append(j)
        coo_d.append(d)
    graph = csr_matrix((coo_d, (coo_i, coo_j)), shape=(n, n))
    return index, direct, graph


def d_v2a(rows, vs_ids, as_ids) -> float:
    """Mean over VS of the min directed travel distance to any AS, in km.

    Listed pair distances are used as given; absent pairs fall back to
    the shortest path over the distance graph.  VS nodes that cannot
    reach any AS are excluded from the mean with a warning.
    """
    vs = [str(v) for v in vs_ids]
    aset = [str(a) for a in as_ids]
    if not vs or not aset:
        raise InputError("both the VS and AS sets must be nonempty")
    overlap = set(vs) & set(aset)
    if overlap:
        raise InputError(f"VS and AS sets overlap: {sorted(overlap)[:5]}")
    index, direct, graph = _distance_graph(rows)
    missing = [v for v in vs + aset if v not in index]
    if missing:
        raise InputError(f"nodes absent from the distance list: {missing[:5]}")
    vs_idx = np.array([index[v] for v in vs])
    as_idx = np.array([index[a] for a in aset])
    sp = dijkstra(graph, directed=True, indices=vs_idx)
    mins = []
    unreachable = []
    for row, v_i in enumerate(vs_idx):
        cand = [
            direct.get((v_i, a_i), sp[row, a_i]) for a_i in as_idx
        ]
        best = min(cand)
        if np.isfinite(best):
            mins.append(best)
        else:
            unreachable.append(vs[row])
    if unreachable:
        warnings.warn(
            f"{len(unreachable)} VS nodes cannot reach any AS and were "
            f"excluded: {unreachable[:8]}",
            UnreachableNodesWarning,
        )
    if not mins:
        raise InputError("every VS node is unreachable from the AS set")
    return float(np.mean(mins)) / 1000.0


def density_sweep(node_ids, vs_counts, runner, seed=0, distance_rows=None):
    """Resample VS sets of each size and collect one report per count.

    runner(vs_ids) must return (est, truth, valid_mask) for the drawn
    virtual sensors.  Returns a list of (vs_count, MetricsReport); the
    reports carry d_v2a when distance_rows is given.
    """
    node_ids = [str(n) for n in node_ids]
    n = len(node_ids)
    rng = np.random.default_rng(seed)
    out = []
    for count in vs_counts:
        count = int(count)
        if not 0 < count < n:
            raise InputError(f"vs_count {count} not in (0, {n})")
        pick = rng.choice(n, size=count, replace=False)
        pick.sort()
        vs = [node_ids[i] for i in pick]
        est, truth, valid = runner(vs)
        report = metrics(est, truth, valid)
        if distance_rows is not None:
            rest = [node_ids[i] for i in range(n) if i not in set(pick)]
            report = replace(report, d_v2a=d_v2a(distance_rows, vs, rest))
        out.append((count, report))
    return out


def save_report_csv(path, rows) -> None:
    """Write (vs_count, MetricsReport) rows under the canonical header."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER.split(","))
        for count, rep in rows:
            writer.writerow(
                [
                    count,
                    "" if rep.d_v2a is None else repr(float(rep.d_v2a)),
                    repr(float(rep.mape)),
                    repr(float(rep.mae)),
                    repr(float(rep.rmse)),
                    rep.n_evaluated,
                    rep.n_excluded_missing,
                ]
            )
    os.replace(tmp, path)
