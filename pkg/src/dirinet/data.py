"""Speed time-series ingestion, windowing, and synthetic corridor data.

Series live on a strict 5-minute grid.  Missing measurements are NaN in
memory, empty cells on disk, and a zero in the binary mask; nothing is
imputed at load time.  The synthetic generator produces a directed
corridor with kinematic congestion waves and keeps the noiseless field
as ground truth.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import InputError, SpeedRangeWarning
from .graph import NodePartition, WeightedDigraph

STEP_SECONDS = 300
SLOTS_PER_DAY = 86400 // STEP_SECONDS  # 288
MPH_TO_MPS = 0.44704
# fixed start instant for generated data: 2012-06-04T00:00:00Z
SYNTH_EPOCH = 1338768000


@dataclass
class SpeedSeries:
    """Wide speed matrix on a uniform 5-minute grid.

    values is T x N in mph with NaN at missing entries; missing_mask is
    the matching binary matrix (1 = measured).
    """

    node_ids: list[str]
    timestamps: np.ndarray  # int64 epoch seconds
    values: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=np.uint8)
        t, n = self.values.shape
        if len(self.node_ids) != n or self.timestamps.shape != (t,):
            raise InputError("series arrays have inconsistent shapes")
        if self.missing_mask.shape != (t, n):
            raise InputError("missing_mask shape does not match values")
        steps = np.diff(self.timestamps)
        if np.any(steps <= 0):
            row = int(np.argmax(steps <= 0)) + 2
            raise InputError(f"timestamps not strictly increasing at row {row}")
        if np.any(steps != STEP_SECONDS):
            row = int(np.argmax(steps != STEP_SECONDS)) + 2
            raise InputError(
                f"irregular timestamp step at row {row}: expected "
                f"{STEP_SECONDS} s, got {int(steps[row - 2])} s"
            )
        measured = self.missing_mask.astype(bool)
        if np.any(~np.isfinite(self.values[measured])):
            raise InputError("measured entries must be finite")
        vals = self.values[measured]
        n_out = int(np.count_nonzero((vals < 0.0) | (vals > 120.0)))
        if n_out:
            warnings.warn(
                f"{n_out} measured value(s) outside the plausible 0-120 mph range",
                SpeedRangeWarning,
                stacklevel=2,
            )

    @property
    def n_steps(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.values.shape[1])

    @property
    def missing_rate(self) -> float:
        return 1.0 - float(self.missing_mask.mean())


@dataclass
class SignalWindow:
    """One estimation round: N x L values with mask, masked-out entries 0.

    slot_of_day indexes the 5-minute slot of the LAST column;
    node_partition (observed vs unobserved) is attached by the caller
    once the sensor layout for the window is known.
    """

    values: np.ndarray
    mask: np.ndarray
    slot_of_day: int
    t_start: int
    node_partition: NodePartition | None = None

    @property
    def length(self) -> int:
        return int(self.values.shape[1])


def _parse_timestamp(text: str, where: str) -> int:
    s = text.strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        raise InputError(f"{where}: cannot parse timestamp {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def load_speed_csv(path) -> SpeedSeries:
    """Wide CSV `timestamp,<id1>,<id2>,...`; empty cells are missing."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "timestamp" or len(header) < 2:
            raise InputError(
                f"{path}: expected header 'timestamp,<id>,...', got {header}"
            )
        node_ids = [c.strip() for c in header[1:]]
        if len(set(node_ids)) != len(node_ids):
            raise InputError(f"{path}: duplicate sensor columns")
        n = len(node_ids)
        timestamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            if len(row) != n + 1:
                raise InputError(
                    f"{path}:{lineno}: expected {n + 1} columns, got {len(row)}"
                )
            timestamps.append(_parse_timestamp(row[0], f"{path}:{lineno}"))
            vals = np.empty(n)
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if not cell or cell.lower() == "nan":
                    vals[j] = np.nan
                else:
                    try:
                        vals[j] = float(cell)
                    except ValueError:
                        raise InputError(
                            f"{path}:{lineno}: bad speed value {cell!r}"
                        ) from None
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    values = np.vstack(rows)
    mask = np.isfinite(values).astype(np.uint8)
    try:
        return SpeedSeries(node_ids, np.array(timestamps), values, mask)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def save_speed_csv(path, series: SpeedSeries) -> None:
    """Inverse of load_speed_csv; missing entries become empty cells."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp"] + list(series.node_ids))
        for t in range(series.n_steps):
            stamp = datetime.fromtimestamp(
                int(series.timestamps[t]), tz=timezone.utc
            ).strftime("%Y-%m-%dT%H:%M:%S")
            cells = [
                repr(float(v)) if m else ""
                for v, m in zip(series.values[t], series.missing_mask[t])
            ]
            writer.writerow([stamp] + cells)


def window_iter(series: SpeedSeries, length: int = 12, stride: int = 12):
    """Non-overlapping (by default) N x L windows; short tail dropped."""
    if length < 1 or stride < 1:
        raise InputError("window length and stride must be >= 1")
    for start in range(0, series.n_steps - length + 1, stride):
        end = start + length
        vals = series.values[start:end].T.copy()
        mask = series.missing_mask[start:end].T.copy()
        vals[mask == 0] = 0.0
        slot = int(series.timestamps[end - 1] % 86400) // STEP_SECONDS
        yield SignalWindow(vals, mask, slot, int(series.timestamps[start]))


def align_series_to_graph(series: SpeedSeries, g: WeightedDigraph):
    """Map series columns onto the graph's node order.

    Returns (values, mask) of shape T x n_nodes(g); graph nodes without
    a series column get an all-missing column.  Series columns naming
    sensors absent from the graph are an error.
    """
    col = {nid: j for j, nid in enumerate(series.node_ids)}
    unknown = [nid for nid in series.node_ids if nid not in g._index]
    if unknown:
        raise InputError(f"series columns not in graph: {unknown[:5]}")
    values = np.full((series.n_steps, g.n_nodes), np.nan)
    mask = np.zeros((series.n_steps, g.n_nodes), dtype=np.uint8)
    for i, nid in enumerate(g.node_ids):
        j = col.get(nid)
        if j is not None:
            values[:, i] = series.values[:, j]
            mask[:, i] = series.missing_mask[:, j]
    return values, mask


@dataclass(frozen=True)
class SynthConfig:
    """Directed-corridor generator settings.

    congestion_wave_mph is negative: congestion fronts travel upstream
    against the driving direction.
    """

    n_nodes: int = 60
    segment_len_m: float = 500.0
    days: int = 20
    free_flow_mph: float = 60.0
    congestion_wave_mph: float = -12.0
    n_waves_per_day: int = 3
    noise_std_mph: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise InputError("corridor needs at least 2 nodes")
        if self.segment_len_m <= 0:
            raise InputError("segment_len_m must be positive")
        if self.days < 1:
            raise InputError("days must be >= 1")
        if self.free_flow_mph <= 0:
            raise InputError("free_flow_mph must be positive")
        if self.congestion_wave_mph >= 0:
            raise InputError(
                "congestion_wave_mph must be negative (waves move upstream)"
            )
        if self.n_waves_per_day < 0 or self.noise_std_mph < 0:
            raise InputError("n_waves_per_day and noise_std_mph must be >= 0")


@dataclass
class SynthDataset:
    """Generated corridor: noisy observations, clean truth, road table."""

    series: SpeedSeries
    truth: SpeedSeries
    distances: list  # (from_id, to_id, meters) directed roadway entries
    config: SynthConfig = field(repr=False, default=None)


def _base_profile(cfg: SynthConfig, tod_hours: np.ndarray) -> np.ndarray:
    """Free-flow speed with a smooth evening rush dip (periodic in 24 h)."""
    delta = np.abs(tod_hours - 17.0)
    delta = np.minimum(delta, 24.0 - delta)  # circular day distance
    dip = 0.12 * cfg.free_flow_mph * np.exp(-0.5 * (delta / 1.8) ** 2)
    return cfg.free_flow_mph - dip


def generate_synthetic(cfg: SynthConfig) -> SynthDataset:
    """Directed chain 0 -> 1 -> ... with upstream-running congestion waves.

    Node i's base series is the daily profile delayed by the travel
    time from node 0.  Each congestion event is a triangular space-time
    region: the onset front leaves the origin node at
    |congestion_wave_mph| against the edge direction, the recovery
    front runs downstream, and the speed at each affected node drops by
    the event depth at onset and recovers linearly.  The noiseless
    field is returned separately as ground truth.
    """
    rng = np.random.default_rng(cfg.seed)
    n, steps = cfg.n_nodes, cfg.days * SLOTS_PER_DAY
    t_sec = STEP_SECONDS * np.arange(steps, dtype=np.float64)
    pos = cfg.segment_len_m * np.arange(n, dtype=np.float64)
    tau = pos / (cfg.free_flow_mph * MPH_TO_MPS)

    tod = ((t_sec[None, :] - tau[:, None]) % 86400.0) / 3600.0
    truth = _base_profile(cfg, tod)

    wave_mps = abs(cfg.congestion_wave_mph) * MPH_TO_MPS
    recovery_mps = 1.5 * wave_mps
    deficit = np.zeros((n, steps))
    for day in range(cfg.days):
        for _ in range(cfg.n_waves_per_day):
            t0 = day * 86400.0 + rng.uniform(6.0, 21.0) * 3600.0
            origin = int(rng.integers(1, n))
            duration = rng.uniform(2400.0, 5400.0)
            depth = rng.uniform(0.45, 0.70) * cfg.free_flow_mph
            onset = t0 + (pos[origin] - pos) / wave_mps
            t_end = t0 + duration + (pos - pos[origin]) / recovery_mps
            upstream = (pos <= pos[origin]) & (t_end > onset)
            span = np.where(upstream, t_end - onset, np.inf)
            inside = (
                upstream[:, None]
                & (t_sec[None, :] >= onset[:, None])
                & (t_sec[None, :] < t_end[:, None])
            )
            frac = (t_sec[None, :] - onset[:, None]) / span[:, None]
            dep = np.where(inside, depth * (1.0 - frac), 0.0)
            deficit = np.maximum(deficit, dep)
    floor = 0.05 * cfg.free_flow_mph
    truth = np.maximum(truth - deficit, floor)

    observed = truth.copy()
    if cfg.noise_std_mph > 0:
        observed = observed + rng.normal(0.0, cfg.noise_std_mph, truth.shape)
    observed = np.clip(observed, 0.0, 120.0)

    node_ids = [f"c{i:03d}" for i in range(n)]
    timestamps = SYNTH_EPOCH + STEP_SECONDS * np.arange(steps, dtype=np.int64)
    full_mask = np.ones((steps, n), dtype=np.uint8)
    series = SpeedSeries(node_ids, timestamps, observed.T.copy(), full_mask)
    truth_series = SpeedSeries(node_ids, timestamps, truth.T.copy(), full_mask.copy())
    distances = [
        (node_ids[i], node_ids[i + 1], float(cfg.segment_len_m))
        for i in range(n - 1)
    ]
    return SynthDataset(series, truth_series, distances, cfg)


def corridor_sigma(cfg: SynthConfig) -> float:
    """Usable kernel width for the equal-length corridor.

    The automatic sigma (population std of distances) is zero when all
    segments are equal, so corridor graphs use the segment length
    itself.
    """
    return float(cfg.segment_len_m)
