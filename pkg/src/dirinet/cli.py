"""Command-line front door: files and seeds in, CSV artifacts out.

Exit codes: 0 success, 2 input problems, 3 protocol violations (e.g. a
window with no usable sensors), 4 checkpoint problems.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from . import __version__
from .autoencoder import (
    ModelConfig,
    ModelParams,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .data import (
    SpeedSeries,
    SynthConfig,
    align_series_to_graph,
    generate_synthetic,
    load_speed_csv,
    save_speed_csv,
    window_iter,
)
from .errors import CheckpointError, DirinetError, InputError, ProtocolError
from .evaluation import d_v2a, metrics, save_report_csv
from .graph import (
    NodePartition,
    build_adjacency,
    load_distances,
    load_graph,
    load_node_ids,
    observed_subgraph,
    save_graph,
)
from .manifest import RunManifest, load_config
from .propagation import (
    PropagationConfig,
    propagate,
    propagate_decoupled,
    reference_speeds,
)
from .training import TrainConfig, fit

_MODEL_KEYS = (
    "length", "hidden", "latent", "d_time", "d_mask", "alpha", "k_max",
    "latent_iters", "latent_tol",
)
_TRAIN_KEYS = (
    "mask_ratio", "learning_rate", "beta1", "beta2", "eps", "max_epochs",
    "patience", "split_ratio", "seed", "loss_scope",
)


def _aligned_series(series: SpeedSeries, g) -> SpeedSeries:
    values, mask = align_series_to_graph(series, g)
    return SpeedSeries(list(g.node_ids), series.timestamps, values, mask)


def _manifest_path(out_path) -> str:
    return f"{out_path}.manifest"


# ------------------------------------------------------------- graph-build


def cmd_graph_build(args) -> int:
    man = RunManifest("graph-build")
    node_ids = load_node_ids(args.nodes) if args.nodes else None
    rows = load_distances(args.distances)
    if args.sigma == "auto":
        sigma = "auto"
    else:
        sigma = float(args.sigma)
    g = build_adjacency(rows, sigma=sigma, kappa=args.kappa, node_ids=node_ids)
    sigma_used = (
        float(np.std([d for _, _, d in rows])) if sigma == "auto" else sigma
    )
    meta = {"sigma": sigma_used, "kappa": args.kappa if args.kappa else "none"}
    save_graph(args.out, g, meta)
    n_edges = g.adjacency.nnz
    print(f"graph: N={g.n_nodes} edges={n_edges}")
    print(
        f"degree: mean_out={g.out_degree.mean():.4f} "
        f"mean_in={g.in_degree.mean():.4f}"
    )
    man.record(
        sigma=sigma_used,
        kappa="none" if args.kappa is None else args.kappa,
        n_nodes=g.n_nodes,
        n_edges=n_edges,
        out=str(args.out),
    )
    if args.nodes:
        man.record_input("nodes", args.nodes)
    man.record_input("distances", args.distances)
    man.write(_manifest_path(args.out))
    return 0


# -------------------------------------------------------------- propagate


def _resolve_vref(spec: str, values: np.ndarray, n: int) -> np.ndarray:
    if spec == "auto":
        return reference_speeds(values)
    try:
        v = float(spec)
    except ValueError:
        raise InputError(
            f"--vref must be 'auto' or a speed in mph, got {spec!r}"
        ) from None
    return np.full(n, v)


def cmd_propagate(args) -> int:
    man = RunManifest("propagate")
    g, _ = load_graph(args.graph)
    series = load_speed_csv(args.readings)
    aligned = _aligned_series(series, g)
    listed = sorted(g.index_of(i) for i in load_node_ids(args.observed))
    values, mask = aligned.values, aligned.missing_mask
    v_ref = None
    if args.mode == "decoupled":
        v_ref = _resolve_vref(args.vref, values, g.n_nodes)
    est = np.empty_like(values)
    # group time rows by which listed sensors actually reported
    patterns: dict[tuple, list[int]] = {}
    for t in range(aligned.n_steps):
        key = tuple(i for i in listed if mask[t, i])
        patterns.setdefault(key, []).append(t)
    for key, rows_t in patterns.items():
        if not key:
            raise ProtocolError(
                f"no observed sensors reported at t={aligned.timestamps[rows_t[0]]}"
            )
        part = NodePartition.from_observed(g.n_nodes, list(key))
        cfg = PropagationConfig(
            max_iters=args.iters, tol=args.tol, mode=args.mode,
            seed=args.seed, v_ref=v_ref,
        )
        if args.mode == "coupled":
            x_obs = values[np.ix_(rows_t, part.observed)].T
            x, iters, resid = propagate(g, part, x_obs, cfg)
            est[rows_t, :] = x.T
        else:
            iters, resid = 0, 0.0
            for t in rows_t:
                x, it, r = propagate_decoupled(
                    g, part, values[t, part.observed], cfg
                )
                est[t, :] = x
                iters, resid = max(iters, it), max(resid, r)
        print(
            f"window group: rows={len(rows_t)} observed={len(key)} "
            f"iters={iters} resid={resid:.3e}"
        )
    out_series = SpeedSeries(
        list(g.node_ids), aligned.timestamps, est,
        np.ones(est.shape, dtype=np.uint8),
    )
    save_speed_csv(args.out, out_series)
    man.record(
        mode=args.mode, iters=args.iters, tol=args.tol,
        vref="none" if args.vref is None else args.vref,
        seed="none" if args.seed is None else args.seed,
        out=str(args.out),
    )
    for label, p in (
        ("graph", args.graph), ("readings", args.readings),
        ("observed", args.observed),
    ):
        man.record_input(label, p)
    man.write(_manifest_path(args.out))
    return 0


# ------------------------------------------------------------------ train


def _split_config(raw: dict):
    model_kw, train_kw = {}, {}
    for key, value in raw.items():
        if key in _MODEL_KEYS:
            model_kw[key] = value
        elif key in _TRAIN_KEYS:
            train_kw[key] = value
        elif key == "train_latent_iters":
            train_kw["latent_iters"] = value
        else:
            raise InputError(f"unknown config key {key!r}")
    return model_kw, train_kw


def cmd_train(args) -> int:
    man = RunManifest("train")
    g, _ = load_graph(args.graph)
    series = load_speed_csv(args.readings)
    raw = load_config(args.config) if args.config else {}
    model_kw, train_kw = _split_config(raw)
    if args.seed is not None:
        train_kw["seed"] = args.seed
    cfg = ModelConfig(**model_kw)
    train_cfg = TrainConfig(**train_kw)
    params = ModelParams.init(cfg, seed=train_cfg.seed)
    best, fitted_cfg, history = fit(params, series, g, cfg, train_cfg)
    save_checkpoint(args.out_checkpoint, best, fitted_cfg)
    history_path = args.out_history or f"{args.out_checkpoint}.history.csv"
    with open(history_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(history):
            writer.writerow([i, repr(loss)])
    best_epoch = int(np.argmin(history))
    print(
        f"trained {len(history)} epochs; best loss "
        f"{history[best_epoch]:.6f} at epoch {best_epoch}"
    )
    man.record(
        **{f"model.{k}": v for k, v in
           dataclasses.asdict(fitted_cfg).items()},
        **{f"train.{k}": v for k, v in
           dataclasses.asdict(train_cfg).items()},
        epochs_run=len(history),
        best_epoch=best_epoch,
        best_loss=history[best_epoch],
        out=str(args.out_checkpoint),
    )
    man.record_input("graph", args.graph)
    man.record_input("readings", args.readings)
    if args.config:
        man.record_input("config", args.config)
    man.write(_manifest_path(args.out_checkpoint))
    return 0


# --------------------------------------------------------------- estimate


def cmd_estimate(args) -> int:
    man = RunManifest("estimate")
    params, cfg = load_checkpoint(args.checkpoint)
    g, _ = load_graph(args.graph)
    series = load_speed_csv(args.readings)
    aligned = _aligned_series(series, g)
    listed = sorted(g.index_of(i) for i in load_node_ids(args.observed))
    est = np.full(aligned.values.shape, np.nan)
    filled = np.zeros(aligned.values.shape, dtype=np.uint8)
    t0 = int(aligned.timestamps[0])
    n_windows = 0
    for w in window_iter(aligned, cfg.length, cfg.length):
        start = (w.t_start - t0) // 300
        has_data = w.mask.any(axis=1)
        observed = [i for i in listed if has_data[i]]
        if not observed:
            raise ProtocolError(
                f"window starting t={w.t_start} has no usable sensors"
            )
        part = NodePartition.from_observed(g.n_nodes, observed)
        window = dataclasses.replace(w, node_partition=part)
        g_obs = observed_subgraph(g, part.observed)
        y = forward(params, window, g, g_obs, cfg)
        est[start : start + cfg.length, :] = y.T
        filled[start : start + cfg.length, :] = 1
        n_windows += 1
    if n_windows == 0:
        raise InputError(
            f"series too short for one {cfg.length}-step window"
        )
    print(f"estimated {n_windows} windows of {cfg.length} steps")
    out_series = SpeedSeries(
        list(g.node_ids), aligned.timestamps, est, filled
    )
    save_speed_csv(args.out, out_series)
    man.record(
        checkpoint=str(args.checkpoint),
        seed="none" if args.seed is None else args.seed,
        windows=n_windows,
        out=str(args.out),
    )
    for label, p in (
        ("checkpoint", args.checkpoint), ("graph", args.graph),
        ("readings", args.readings), ("observed", args.observed),
    ):
        man.record_input(label, p)
    man.write(_manifest_path(args.out))
    return 0


# ------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    man = RunManifest("eval")
    est = load_speed_csv(args.estimates)
    truth = load_speed_csv(args.truth)
    vs_ids = load_node_ids(args.vs)
    if not np.array_equal(est.timestamps, truth.timestamps):
        raise InputError("estimate and truth timestamps differ")
    missing_t = [v for v in vs_ids if v not in truth.node_ids]
    if missing_t:
        raise InputError(f"VS ids missing from truth: {missing_t[:5]}")
    missing_e = [v for v in vs_ids if v not in est.node_ids]
    if missing_e:
        raise InputError(f"VS ids missing from estimates: {missing_e[:5]}")
    t_col = {nid: j for j, nid in enumerate(truth.node_ids)}
    e_col = {nid: j for j, nid in enumerate(est.node_ids)}
    t_idx = [t_col[v] for v in vs_ids]
    e_idx = [e_col[v] for v in vs_ids]
    valid = truth.missing_mask[:, t_idx] & est.missing_mask[:, e_idx]
    rep = metrics(est.values[:, e_idx], truth.values[:, t_idx], valid)
    if args.distances:
        rows = load_distances(args.distances)
        as_ids = [n for n in truth.node_ids if n not in set(vs_ids)]
        if not as_ids:
            raise InputError("every truth column is a VS; no AS set remains")
        rep = dataclasses.replace(rep, d_v2a=d_v2a(rows, vs_ids, as_ids))
    save_report_csv(args.out, [(len(vs_ids), rep)])
    d_txt = "" if rep.d_v2a is None else f" d_v2a={rep.d_v2a:.4f}km"
    print(
        f"vs={len(vs_ids)} mape={rep.mape:.4f}% mae={rep.mae:.4f} "
        f"rmse={rep.rmse:.4f} n={rep.n_evaluated} "
        f"excluded={rep.n_excluded_missing}{d_txt}"
    )
    man.record(vs_count=len(vs_ids), out=str(args.out))
    man.record_input("estimates", args.estimates)
    man.record_input("truth", args.truth)
    man.record_input("vs", args.vs)
    if args.distances:
        man.record_input("distances", args.distances)
    man.write(_manifest_path(args.out))
    return 0


# ------------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    man = RunManifest("synth")
    raw = load_config(args.config) if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = SynthConfig(**raw)
    except TypeError as exc:
        raise InputError(f"bad synth config: {exc}") from None
    ds = generate_synthetic(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    readings = os.path.join(args.out_dir, "readings.csv")
    truth = os.path.join(args.out_dir, "truth.csv")
    distances = os.path.join(args.out_dir, "distances.csv")
    nodes = os.path.join(args.out_dir, "nodes.csv")
    save_speed_csv(readings, ds.series)
    save_speed_csv(truth, ds.truth)
    with open(distances, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to", "dist"])
        for frm, to, d in ds.distances:
            writer.writerow([frm, to, repr(float(d))])
    with open(nodes, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"])
        for nid in ds.series.node_ids:
            writer.writerow([nid])
    print(
        f"synthetic corridor: {cfg.n_nodes} nodes, {cfg.days} days "
        f"-> {args.out_dir}"
    )
    man.record(
        **{f"synth.{k}": v for k, v in dataclasses.asdict(cfg).items()},
        out_dir=str(args.out_dir),
    )
    man.write(os.path.join(args.out_dir, "run.manifest"))
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dirinet",
        description="Traffic speed estimation at sensor-free road segments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph-build", help="build a sensor graph from distances")
    p.add_argument("--nodes", help="node universe CSV (header: id)")
    p.add_argument("--distances", required=True, help="CSV: from,to,dist meters")
    p.add_argument("--sigma", default="auto", help="kernel width or 'auto'")
    p.add_argument("--kappa", type=float, default=None, help="distance cutoff, m")
    p.add_argument("--out", required=True, help="output graph archive")
    p.set_defaults(func=cmd_graph_build)

    p = sub.add_parser("propagate", help="fill unobserved nodes by propagation")
    p.add_argument("--graph", required=True)
    p.add_argument("--readings", required=True, help="speed CSV")
    p.add_argument("--observed", required=True, help="sensor ids CSV (header: id)")
    p.add_argument("--mode", choices=("coupled", "decoupled"), default="coupled")
    p.add_argument("--iters", type=int, default=90)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--vref", default=None, help="'auto' or mph (decoupled mode)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("train", help="fit the auto-encoder on a speed series")
    p.add_argument("--graph", required=True)
    p.add_argument("--readings", required=True)
    p.add_argument("--config", default=None, help="key = value settings")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-history", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="run a trained model over a series")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--readings", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="score estimates against ground truth")
    p.add_argument("--estimates", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--vs", required=True, help="virtual sensor ids CSV")
    p.add_argument("--distances", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic corridor dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "propagate" and args.mode == "decoupled" and not args.vref:
        print("error: --mode decoupled requires --vref", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InputError, DirinetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
