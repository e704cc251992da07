"""Graph auto-encoder over Dirichlet latent propagation.

Pipeline per window: augment observed rows (z-scored values, slot
embedding, mask embedding), encode on the observed subgraph with dual
direction-aware diffusion branches, extend the latent rows to every
node by boundary-reset propagation sweeps on the full graph, decode
with the mirrored architecture on the full graph, de-normalize.

Every stage is a plain numpy map, so gradients are accumulated in
reverse with explicit transposes; the latent extension is linear in its
boundary values, which keeps its backward pass a loop of transposed
sweeps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import numpy as np

from . import arrayio, backend
from .data import SLOTS_PER_DAY, SignalWindow
from .diffusion import kernel_pair
from .errors import CheckpointError, InputError, IsolatedNodesWarning
from .graph import NodePartition, WeightedDigraph, transition_coupled
from .propagation import PropagationConfig

CHECKPOINT_FORMAT = "DGAE1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes, diffusion settings, and normalization stats.

    length is the window width L; latent_iters is the sweep budget K of
    the latent extension.  mean/std (mph) are the z-scoring constants
    estimated from training data.
    """

    length: int = 12
    hidden: int = 64
    latent: int = 32
    d_time: int = 16
    d_mask: int = 16
    alpha: float = 0.1
    k_max: int = 3
    latent_iters: int = 90
    latent_tol: float = 1e-6
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        for name in ("length", "hidden", "latent", "d_time", "d_mask"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.k_max < 1 or self.latent_iters < 1:
            raise InputError("k_max and latent_iters must be >= 1")
        if self.latent_tol < 0:
            raise InputError("latent_tol must be >= 0")
        if not np.isfinite(self.mean) or not 0.0 < self.std < np.inf:
            raise InputError("norm stats must be finite with std > 0")

    @property
    def aug_width(self) -> int:
        return self.length + self.d_time + self.d_mask


def _expected_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    h, d, ell = cfg.hidden, cfg.latent, cfg.length
    return {
        "enc_in_w": (cfg.aug_width, h),
        "enc_in_b": (h,),
        "enc_cog_w": (h, h),
        "enc_free_w": (h, h),
        "enc_out_w": (h, d),
        "enc_out_b": (d,),
        "dec_in_w": (d, h),
        "dec_in_b": (h,),
        "dec_cog_w": (h, h),
        "dec_free_w": (h, h),
        "dec_out_w": (h, ell),
        "dec_out_b": (ell,),
        "t_embed": (SLOTS_PER_DAY, cfg.d_time),
        "mask_w": (ell, cfg.d_mask),
        "mask_b": (cfg.d_mask,),
    }


@dataclass
class ModelParams:
    """All learnable arrays; shapes never depend on the graph size."""

    enc_in_w: np.ndarray
    enc_in_b: np.ndarray
    enc_cog_w: np.ndarray
    enc_free_w: np.ndarray
    enc_out_w: np.ndarray
    enc_out_b: np.ndarray
    dec_in_w: np.ndarray
    dec_in_b: np.ndarray
    dec_cog_w: np.ndarray
    dec_free_w: np.ndarray
    dec_out_w: np.ndarray
    dec_out_b: np.ndarray
    t_embed: np.ndarray
    mask_w: np.ndarray
    mask_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        out = {}
        for name, shape in _expected_shapes(cfg).items():
            if name.endswith("_b"):
                out[name] = np.zeros(shape)
            elif name == "t_embed":
                out[name] = rng.normal(0.0, 0.1, size=shape)
            else:
                fan_in = shape[0]
                out[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        return cls(**out)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.arrays().items()}


def _obs_kernels(g_obs: WeightedDigraph, cfg: ModelConfig):
    # observed subgraphs routinely contain isolated sensors after
    # masking; all-zero diffusion rows are the intended behavior there
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IsolatedNodesWarning)
        return kernel_pair(g_obs, cfg.alpha, cfg.k_max)


def augment_features(
    window: SignalWindow, params: ModelParams, cfg: ModelConfig
) -> np.ndarray:
    """Observed-row features: z-scored values, slot embedding, mask MLP."""
    part = window.node_partition
    if part is None:
        raise InputError("window has no node partition attached")
    if not 0 <= window.slot_of_day < SLOTS_PER_DAY:
        raise InputError(f"slot_of_day {window.slot_of_day} out of range")
    if window.values.shape[1] != cfg.length:
        raise InputError(
            f"window length {window.values.shape[1]} does not match "
            f"configured {cfg.length}"
        )
    obs = part.observed
    maskf = window.mask[obs].astype(np.float64)
    zs = ((window.values[obs] - cfg.mean) / cfg.std) * maskf
    t_row = np.broadcast_to(params.t_embed[window.slot_of_day], (obs.size, cfg.d_time))
    m_emb = maskf @ params.mask_w + params.mask_b
    return np.concatenate([zs, t_row, m_emb], axis=1)


def encode(
    params: ModelParams,
    aug: np.ndarray,
    g_obs: WeightedDigraph,
    cfg: ModelConfig,
    cache: dict | None = None,
) -> np.ndarray:
    if aug.shape != (g_obs.n_nodes, cfg.aug_width):
        raise InputError(
            f"augmented features {aug.shape} do not match observed "
            f"subgraph of {g_obs.n_nodes} nodes"
        )
    s_cog, s_free = _obs_kernels(g_obs, cfg)
    h = aug @ params.enc_in_w + params.enc_in_b
    r = (
        h
        + backend.spmm(s_cog.matrix, h @ params.enc_cog_w)
        + backend.spmm(s_free.matrix, h @ params.enc_free_w)
    )
    a = np.maximum(r, 0.0)
    z_o = a @ params.enc_out_w + params.enc_out_b
    if cache is not None:
        cache.update(enc_h=h, enc_r=r, enc_a=a, enc_kernels=(s_cog, s_free))
    return z_o


def extend_latent(
    z_o: np.ndarray,
    g: WeightedDigraph,
    part: NodePartition,
    cfg: PropagationConfig,
    cache: dict | None = None,
) -> np.ndarray:
    """Propagate latent rows to the full graph; observed rows stay exact.

    The zero initialization makes the map linear in z_o, which the
    training backward pass relies on.
    """
    if cfg.init != "zeros":
        raise InputError("latent extension requires init='zeros'")
    if z_o.shape[0] != part.observed.size:
        raise InputError(
            f"latent rows {z_o.shape[0]} do not match {part.observed.size} "
            "observed nodes"
        )
    x0 = np.zeros((g.n_nodes,) + z_o.shape[1:])
    x0[part.observed] = z_o
    z, iters, _ = backend.run_sweeps(
        transition_coupled(g).matrix, x0, part.observed, z_o,
        cfg.max_iters, cfg.tol,
    )
    if cache is not None:
        cache.update(latent_iters_used=iters)
    return z


def decode(
    params: ModelParams,
    z: np.ndarray,
    g: WeightedDigraph,
    cfg: ModelConfig,
    cache: dict | None = None,
) -> np.ndarray:
    """Mirror of encode on the full graph; returns z-scored N x L output."""
    if z.shape != (g.n_nodes, cfg.latent):
        raise InputError(f"latent shape {z.shape} does not match graph/config")
    s_cog, s_free = _obs_kernels(g, cfg)
    h = z @ params.dec_in_w + params.dec_in_b
    r = (
        h
        + backend.spmm(s_cog.matrix, h @ params.dec_cog_w)
        + backend.spmm(s_free.matrix, h @ params.dec_free_w)
    )
    a = np.maximum(r, 0.0)
    y = a @ params.dec_out_w + params.dec_out_b
    if cache is not None:
        cache.update(dec_h=h, dec_r=r, dec_a=a, dec_kernels=(s_cog, s_free))
    return y


def _latent_cfg(cfg: ModelConfig) -> PropagationConfig:
    return PropagationConfig(
        max_iters=cfg.latent_iters, tol=cfg.latent_tol, init="zeros"
    )


def forward(
    params: ModelParams,
    window: SignalWindow,
    g: WeightedDigraph,
    g_obs: WeightedDigraph,
    cfg: ModelConfig,
    cache: dict | None = None,
) -> np.ndarray:
    """Full-pipeline estimates in mph, shape N x L."""
    part = window.node_partition
    aug = augment_features(window, params, cfg)
    z_o = encode(params, aug, g_obs, cfg, cache)
    z = extend_latent(z_o, g, part, _latent_cfg(cfg), cache)
    y = decode(params, z, g, cfg, cache)
    if cache is not None:
        cache.update(aug=aug, z_o=z_o, z=z, y=y)
    return y * cfg.std + cfg.mean


def loss_and_gradients(
    params: ModelParams,
    window: SignalWindow,
    targets: np.ndarray,
    eval_mask: np.ndarray,
    g: WeightedDigraph,
    g_obs: WeightedDigraph,
    cfg: ModelConfig,
):
    """Masked MSE in z-scored units and gradients for every array.

    targets is N x L in mph; eval_mask selects the entries the loss
    runs over (typically: masked-out nodes' measured cells).
    """
    sel = np.asarray(eval_mask, dtype=np.float64)
    if sel.shape != targets.shape or targets.shape != window.values.shape:
        raise InputError("targets/eval_mask shapes do not match the window")
    n_sel = sel.sum()
    if n_sel == 0:
        raise InputError("empty evaluation mask")

    cache: dict = {}
    forward(params, window, g, g_obs, cfg, cache)
    y = cache["y"]
    tz = (np.asarray(targets, dtype=np.float64) - cfg.mean) / cfg.std
    diff = (y - tz) * sel
    loss = float((diff * diff).sum() / n_sel)

    grads = zero_grads(params)
    part = window.node_partition
    obs = part.observed

    # decoder
    gy = (2.0 / n_sel) * diff
    grads["dec_out_w"] = cache["dec_a"].T @ gy
    grads["dec_out_b"] = gy.sum(axis=0)
    ga = gy @ params.dec_out_w.T
    gr = ga * (cache["dec_r"] > 0.0)
    s_cog, s_free = cache["dec_kernels"]
    back_cog = backend.spmm(s_cog.matrix_t, gr)
    back_free = backend.spmm(s_free.matrix_t, gr)
    grads["dec_cog_w"] = cache["dec_h"].T @ back_cog
    grads["dec_free_w"] = cache["dec_h"].T @ back_free
    gh = gr + back_cog @ params.dec_cog_w.T + back_free @ params.dec_free_w.T
    grads["dec_in_w"] = cache["z"].T @ gh
    grads["dec_in_b"] = gh.sum(axis=0)
    gz = gh @ params.dec_in_w.T

    # latent extension: transposed sweeps, boundary gradient collection
    gz_o = backend.run_sweeps_gradient(
        transition_coupled(g).matrix_t, gz, obs, cache["latent_iters_used"]
    )

    # encoder
    grads["enc_out_w"] = cache["enc_a"].T @ gz_o
    grads["enc_out_b"] = gz_o.sum(axis=0)
    ga = gz_o @ params.enc_out_w.T
    gr = ga * (cache["enc_r"] > 0.0)
    s_cog, s_free = cache["enc_kernels"]
    back_cog = backend.spmm(s_cog.matrix_t, gr)
    back_free = backend.spmm(s_free.matrix_t, gr)
    grads["enc_cog_w"] = cache["enc_h"].T @ back_cog
    grads["enc_free_w"] = cache["enc_h"].T @ back_free
    gh = gr + back_cog @ params.enc_cog_w.T + back_free @ params.enc_free_w.T
    grads["enc_in_w"] = cache["aug"].T @ gh
    grads["enc_in_b"] = gh.sum(axis=0)
    gaug = gh @ params.enc_in_w.T

    ell, d_t = cfg.length, cfg.d_time
    grads["t_embed"][window.slot_of_day] = gaug[:, ell : ell + d_t].sum(axis=0)
    g_memb = gaug[:, ell + d_t :]
    maskf = window.mask[obs].astype(np.float64)
    grads["mask_w"] = maskf.T @ g_memb
    grads["mask_b"] = g_memb.sum(axis=0)
    return loss, grads


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig) -> None:
    """Little-endian float32 archive with the config block embedded."""
    meta = {
        "length": cfg.length,
        "hidden": cfg.hidden,
        "latent": cfg.latent,
        "d_time": cfg.d_time,
        "d_mask": cfg.d_mask,
        "alpha": cfg.alpha,
        "k_max": cfg.k_max,
        "latent_iters": cfg.latent_iters,
        "latent_tol": cfg.latent_tol,
        "mean": cfg.mean,
        "std": cfg.std,
    }
    arrays = {k: v.astype("<f4") for k, v in params.arrays().items()}
    arrayio.write_archive(path, CHECKPOINT_FORMAT, meta, arrays)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    meta, arrays = arrayio.read_archive(path, CHECKPOINT_FORMAT)
    try:
        cfg = ModelConfig(**meta)
    except (TypeError, InputError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from exc
    out = {}
    for name, shape in _expected_shapes(cfg).items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing array {name!r}")
        arr = arrays[name]
        if arr.shape != shape:
            raise CheckpointError(
                f"{path}: array {name!r} has shape {arr.shape}, "
                f"expected {shape} for this config"
            )
        out[name] = arr.astype(np.float64)
    return ModelParams(**out), cfg
