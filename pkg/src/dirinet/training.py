"""Dynamic-masking training loop with adaptive-moment updates.

Each batch is one window: a fresh virtual-sensor mask is drawn, the
masked nodes are hidden from the encoder, and the loss runs only over
their measured entries.  Epochs scan the training windows in
chronological order; the mask draws are the only randomness.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import ModelConfig, ModelParams, loss_and_gradients
from .data import SignalWindow, SpeedSeries, align_series_to_graph, window_iter
from .errors import InputError, ProtocolError
from .graph import NodePartition, WeightedDigraph, observed_subgraph

_LOSS_SCOPES = ("masked", "all")


@dataclass(frozen=True)
class TrainConfig:
    """Masking, optimizer, split, and stopping settings."""

    mask_ratio: float = 0.25
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    split_ratio: float = 0.7
    seed: int = 0
    latent_iters: int = 30
    loss_scope: str = "masked"

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise InputError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if not 0.0 < self.split_ratio < 1.0:
            raise InputError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.patience < 1 or self.max_epochs < 1:
            raise InputError("patience and max_epochs must be >= 1")
        if self.learning_rate < 0:
            raise InputError("learning_rate must be >= 0")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise InputError("beta1/beta2 must lie in [0, 1)")
        if self.latent_iters < 1:
            raise InputError("latent_iters must be >= 1")
        if self.loss_scope not in _LOSS_SCOPES:
            raise InputError(f"loss_scope must be one of {_LOSS_SCOPES}")


def split_boundary(n_steps: int, ratio: float) -> int:
    """First test-side step index: floor(ratio * n_steps).

    The epsilon absorbs float artifacts like 0.7 * 5760 = 4031.999...,
    which would otherwise shift the cut off the exact 7:3 step.
    """
    return int(math.floor(ratio * n_steps + 1e-9))


def chronological_split(
    series: SpeedSeries, ratio: float, length: int = 12, stride: int = 12
):
    """Contiguous prefix/suffix window lists; nothing straddles the cut."""
    if not 0.0 < ratio < 1.0:
        raise InputError(f"split ratio must lie in (0, 1), got {ratio}")
    boundary = split_boundary(series.n_steps, ratio)
    train, test = [], []
    for w in window_iter(series, length, stride):
        offset = (w.t_start - int(series.timestamps[0])) // 300
        if offset + length <= boundary:
            train.append(w)
        elif offset >= boundary:
            test.append(w)
        # windows straddling the boundary are dropped
    if not train or not test:
        raise InputError(
            f"series too short to split: {len(train)} train / {len(test)} "
            f"test windows at ratio {ratio}"
        )
    return train, test


def sample_mask(available: np.ndarray, ratio: float, rng) -> np.ndarray:
    """Uniform subset of round(ratio * n) nodes, clamped to [1, n - 1]."""
    available = np.asarray(available, dtype=np.int64)
    n = available.size
    if n < 2:
        raise InputError(f"need at least 2 available sensors to mask, got {n}")
    size = int(round(ratio * n))
    size = max(1, min(size, n - 1))
    return np.sort(rng.choice(available, size=size, replace=False))


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter arrays."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays().items()},
            v={k: np.zeros_like(a) for k, a in params.arrays().items()},
        )


def adaptive_moment_step(
    params: ModelParams, grads: dict, state: AdamState, cfg: TrainConfig
) -> None:
    """Bias-corrected moment update applied to the arrays in place."""
    state.t += 1
    b1t = 1.0 - cfg.beta1**state.t
    b2t = 1.0 - cfg.beta2**state.t
    for name, arr in params.arrays().items():
        grad = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        arr -= cfg.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + cfg.eps)


def _norm_stats(windows) -> tuple[float, float]:
    total = 0.0
    total_sq = 0.0
    count = 0
    for w in windows:
        sel = w.mask.astype(bool)
        vals = w.values[sel]
        total += vals.sum()
        total_sq += (vals * vals).sum()
        count += vals.size
    if count == 0:
        raise InputError("training windows contain no measured values")
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    std = math.sqrt(var)
    if std <= 0.0:
        raise InputError("training data is constant; cannot z-score")
    return float(mean), float(std)


def _batch(
    params,
    window: SignalWindow,
    available: np.ndarray,
    g: WeightedDigraph,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    rng,
):
    """One dynamic-masking step; returns (loss, grads) or None to skip."""
    masked = sample_mask(available, train_cfg.mask_ratio, rng)
    visible = np.setdiff1d(available, masked)
    part = NodePartition.from_observed(window.mask.shape[0], visible)
    eval_rows = masked if train_cfg.loss_scope == "masked" else available
    eval_mask = np.zeros(window.mask.shape, dtype=np.float64)
    eval_mask[eval_rows] = window.mask[eval_rows]
    if eval_mask.sum() == 0:
        return None
    batch_window = SignalWindow(
        window.values, window.mask, window.slot_of_day, window.t_start,
        node_partition=part,
    )
    g_obs = observed_subgraph(g, part.observed)
    return loss_and_gradients(
        params, batch_window, window.values, eval_mask, g, g_obs, cfg
    )


def fit(
    params: ModelParams,
    series: SpeedSeries,
    g: WeightedDigraph,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
):
    """Train on the chronological prefix of the series.

    Returns (best_params, fitted_cfg, history).  fitted_cfg is cfg with
    the z-scoring stats measured on the training split; history is the
    per-epoch mean masked loss.  The best-loss parameters are returned,
    not the last ones (the validation set equals the training set, so
    the tracked loss is the epoch-mean training loss).
    """
    values_full, mask_full = align_series_to_graph(series, g)
    available = np.nonzero(mask_full.any(axis=0))[0]
    if available.size < 2:
        raise ProtocolError(
            f"training needs at least 2 sensors with data, got {available.size}"
        )
    train_windows, _ = chronological_split(
        series, train_cfg.split_ratio, cfg.length, cfg.length
    )
    batches = _graph_windows(values_full, mask_full, train_windows, series)
    mean, std = _norm_stats(batches)
    fitted_cfg = dataclasses.replace(cfg, mean=mean, std=std)
    run_cfg = dataclasses.replace(fitted_cfg, latent_iters=train_cfg.latent_iters)

    rng = np.random.default_rng(train_cfg.seed)
    params = params.copy()
    state = AdamState.for_params(params)
    best_params = params.copy()
    best_loss = math.inf
    history: list[float] = []
    bad_epochs = 0
    for epoch in range(train_cfg.max_epochs):
        losses = []
        for w in batches:
            out = _batch(params, w, available, g, run_cfg, train_cfg, rng)
            if out is None:
                continue
            loss, grads = out
            if not math.isfinite(loss):
                raise ProtocolError(
                    f"non-finite loss at epoch {epoch}, window starting "
                    f"t={w.t_start}; try a lower learning rate"
                )
            adaptive_moment_step(params, grads, state, train_cfg)
            losses.append(loss)
        if not losses:
            raise ProtocolError("no usable training batches (all masks empty)")
        epoch_loss = float(np.mean(losses))
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_cfg.patience:
                break
    return best_params, fitted_cfg, history


def _graph_windows(values_full, mask_full, windows, series):
    """Window copies in graph node order (rows = graph nodes)."""
    out = []
    t0 = int(series.timestamps[0])
    for w in windows:
        start = (w.t_start - t0) // 300
        end = start + w.length
        vals = values_full[start:end].T.copy()
        mask = mask_full[start:end].T.copy()
        vals[mask == 0] = 0.0
        out.append(SignalWindow(vals, mask, w.slot_of_day, w.t_start))
    return out
