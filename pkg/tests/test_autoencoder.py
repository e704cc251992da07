"""Model tests: finite-difference gradient oracle, equivariance, checkpoints."""

import numpy as np
import pytest
import scipy.sparse as sp

from dirinet.autoencoder import (
    ModelConfig,
    ModelParams,
    augment_features,
    decode,
    encode,
    extend_latent,
    forward,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
)
from dirinet.data import SignalWindow
from dirinet.errors import CheckpointError, InputError
from dirinet.graph import NodePartition, WeightedDigraph, observed_subgraph
from dirinet.propagation import PropagationConfig, propagate, propagate_closed_form

SMALL = ModelConfig(
    length=4, hidden=8, latent=3, d_time=4, d_mask=4,
    alpha=0.2, k_max=2, latent_iters=8, latent_tol=0.0,
    mean=45.0, std=12.0,
)


def connected_digraph(rng, n, density=0.3):
    a = rng.random((n, n)) * (rng.random((n, n)) < density)
    order = rng.permutation(n)
    for i in range(n - 1):
        a[order[i], order[i + 1]] = rng.uniform(0.2, 1.0)
    np.fill_diagonal(a, 0.0)
    return WeightedDigraph.from_adjacency([f"s{i}" for i in range(n)], sp.csr_matrix(a))


def make_instance(rng, n=10, n_obs=6, cfg=SMALL, missing=0):
    g = connected_digraph(rng, n)
    part = NodePartition.from_observed(n, rng.choice(n, n_obs, replace=False))
    values = rng.uniform(20.0, 70.0, size=(n, cfg.length))
    mask = np.ones((n, cfg.length), dtype=np.uint8)
    for _ in range(missing):
        mask[rng.integers(n), rng.integers(cfg.length)] = 0
    values = values * mask
    window = SignalWindow(
        values, mask, int(rng.integers(288)), 0, node_partition=part
    )
    g_obs = observed_subgraph(g, part.observed)
    return g, g_obs, part, window


def masked_mse_loss(params, window, targets, sel, g, g_obs, cfg):
    """Loss recomputed from the forward pass alone (for FD probing)."""
    est = forward(params, window, g, g_obs, cfg)
    y = (est - cfg.mean) / cfg.std
    tz = (targets - cfg.mean) / cfg.std
    diff = (y - tz) * sel
    return float((diff * diff).sum() / sel.sum())


# -- feature augmentation --------------------------------------------------

def test_augment_width_and_node_anonymity():
    rng = np.random.default_rng(0)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=1)
    aug = augment_features(window, params, SMALL)
    assert aug.shape == (part.observed.size, SMALL.aug_width)
    # identical values+mask rows produce identical augmented rows
    i, j = part.observed[0], part.observed[1]
    window.values[j] = window.values[i]
    window.mask[j] = window.mask[i]
    aug = augment_features(window, params, SMALL)
    assert np.array_equal(aug[0], aug[1])


def test_augment_mask_embedding_distinguishes_masks():
    rng = np.random.default_rng(1)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=2)
    i, j = 0, 1
    window.mask[part.observed[i]] = 1
    window.mask[part.observed[j]] = 0
    window.values[part.observed[j]] = 0.0
    aug = augment_features(window, params, SMALL)
    d_slice = slice(SMALL.length + SMALL.d_time, None)
    assert not np.allclose(aug[i, d_slice], aug[j, d_slice])


def test_augment_validation():
    rng = np.random.default_rng(2)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=3)
    window.slot_of_day = 288
    with pytest.raises(InputError, match="slot_of_day"):
        augment_features(window, params, SMALL)
    window.slot_of_day = 5
    window.node_partition = None
    with pytest.raises(InputError, match="partition"):
        augment_features(window, params, SMALL)


# -- encoder / latent extension / decoder ----------------------------------

def test_encode_single_isolated_node_reduces_to_mlp():
    g = WeightedDigraph.from_adjacency(["only"], sp.csr_matrix((1, 1)))
    params = ModelParams.init(SMALL, seed=4)
    aug = np.random.default_rng(3).standard_normal((1, SMALL.aug_width))
    z = encode(params, aug, g, SMALL)
    h = aug @ params.enc_in_w + params.enc_in_b
    expect = np.maximum(h, 0.0) @ params.enc_out_w + params.enc_out_b
    assert np.allclose(z, expect, atol=0)


def test_encode_zero_input_zero_bias_gives_zero():
    rng = np.random.default_rng(4)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=5)
    for name in ("enc_in_b", "enc_out_b"):
        getattr(params, name)[:] = 0.0
    z = encode(params, np.zeros((g_obs.n_nodes, SMALL.aug_width)), g_obs, SMALL)
    assert np.all(z == 0.0)


def test_extend_latent_boundary_and_oracle():
    rng = np.random.default_rng(5)
    g = connected_digraph(rng, 20)
    part = NodePartition.from_observed(20, rng.choice(20, 8, replace=False))
    z_o = rng.standard_normal((8, 3))
    cfg = PropagationConfig(max_iters=2000, tol=1e-14, init="zeros")
    z = extend_latent(z_o, g, part, cfg)
    assert np.array_equal(z[part.observed], z_o)  # bit-for-bit
    for c in range(3):
        exact = propagate_closed_form(g, part, z_o[:, c])
        assert np.max(np.abs(z[:, c] - exact)) <= 1e-5


def test_extend_latent_matches_scalar_propagate():
    rng = np.random.default_rng(6)
    g = connected_digraph(rng, 12)
    part = NodePartition.from_observed(12, rng.choice(12, 5, replace=False))
    z_o = rng.standard_normal((5, 1))
    cfg = PropagationConfig(max_iters=50, tol=0.0, init="zeros")
    z = extend_latent(z_o, g, part, cfg)
    ref, _, _ = propagate(g, part, z_o[:, 0], cfg)
    assert np.array_equal(z[:, 0], ref)


def test_extend_latent_requires_zero_init():
    rng = np.random.default_rng(7)
    g = connected_digraph(rng, 6)
    part = NodePartition.from_observed(6, [0, 1])
    with pytest.raises(InputError, match="zeros"):
        extend_latent(
            np.zeros((2, 3)), g, part, PropagationConfig(init="observed_mean")
        )


def test_decode_zero_latent_gives_dataset_mean():
    rng = np.random.default_rng(8)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=6)
    for name in ("dec_in_b", "dec_out_b"):
        getattr(params, name)[:] = 0.0
    y = decode(params, np.zeros((g.n_nodes, SMALL.latent)), g, SMALL)
    assert np.all(y == 0.0)
    assert np.allclose(y * SMALL.std + SMALL.mean, SMALL.mean)


# -- forward ----------------------------------------------------------------

def test_forward_deterministic_and_unconstrained_at_observed():
    rng = np.random.default_rng(9)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=7)
    a = forward(params, window, g, g_obs, SMALL)
    b = forward(params, window, g, g_obs, SMALL)
    assert a.shape == (g.n_nodes, SMALL.length)
    assert np.array_equal(a, b)
    # reconstruction is soft: observed rows are not copied through
    assert not np.allclose(a[part.observed], window.values[part.observed])


def test_forward_full_observation_degenerate_partition():
    rng = np.random.default_rng(10)
    g, _, _, window = make_instance(rng)
    part = NodePartition.from_observed(g.n_nodes, np.arange(g.n_nodes))
    window.node_partition = part
    est = forward(ModelParams.init(SMALL, seed=8), window, g, g, SMALL)
    assert est.shape == (g.n_nodes, SMALL.length)


def test_forward_node_permutation_equivariance():
    rng = np.random.default_rng(11)
    g, g_obs, part, window = make_instance(rng, n=9, n_obs=5)
    params = ModelParams.init(SMALL, seed=9)
    est = forward(params, window, g, g_obs, SMALL)

    perm = rng.permutation(g.n_nodes)  # new index i holds old node perm[i]
    a_p = g.adjacency.toarray()[np.ix_(perm, perm)]
    g_p = WeightedDigraph.from_adjacency(
        [g.node_ids[k] for k in perm], sp.csr_matrix(a_p)
    )
    inv = np.argsort(perm)
    part_p = NodePartition.from_observed(g.n_nodes, inv[part.observed])
    window_p = SignalWindow(
        window.values[perm], window.mask[perm], window.slot_of_day, 0,
        node_partition=part_p,
    )
    est_p = forward(
        params, window_p, g_p, observed_subgraph(g_p, part_p.observed), SMALL
    )
    assert np.allclose(est_p, est[perm], atol=1e-10)


# -- loss and gradients ------------------------------------------------------

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(12)
    g, g_obs, part, window = make_instance(rng, n=10, n_obs=6, missing=4)
    params = ModelParams.init(SMALL, seed=10)
    targets = rng.uniform(20.0, 70.0, size=window.values.shape)
    sel = np.zeros_like(targets)
    sel[part.unobserved] = window.mask[part.unobserved]
    sel[part.unobserved[0]] = 1.0  # ensure nonempty even if all masked out

    loss, grads = loss_and_gradients(
        params, window, targets, sel, g, g_obs, SMALL
    )
    assert loss > 0.0
    eps = 1e-4
    worst = 0.0
    for name, arr in params.arrays().items():
        flat = arr.ravel()
        g_an = grads[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = masked_mse_loss(params, window, targets, sel, g, g_obs, SMALL)
            flat[i] = orig - eps
            lm = masked_mse_loss(params, window, targets, sel, g, g_obs, SMALL)
            flat[i] = orig
            fd = (lp - lm) / (2 * eps)
            rel = abs(fd - g_an[i]) / max(abs(fd) + abs(g_an[i]), 1e-6)
            worst = max(worst, rel)
    assert worst <= 1e-3, f"worst relative gradient error {worst}"


def test_loss_zero_at_perfect_estimates_and_quadratic_scaling():
    rng = np.random.default_rng(13)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=11)
    sel = np.zeros_like(window.values)
    sel[part.unobserved] = 1.0
    est = forward(params, window, g, g_obs, SMALL)
    loss0, grads0 = loss_and_gradients(params, window, est, sel, g, g_obs, SMALL)
    # zero up to the de-normalize/re-normalize rounding of the targets
    assert loss0 <= 1e-28
    assert all(np.max(np.abs(v)) <= 1e-14 for v in grads0.values())

    targets = rng.uniform(20.0, 70.0, size=est.shape)
    loss1, _ = loss_and_gradients(params, window, targets, sel, g, g_obs, SMALL)
    doubled = est - 2.0 * (est - targets)
    loss2, _ = loss_and_gradients(params, window, doubled, sel, g, g_obs, SMALL)
    assert loss2 == pytest.approx(4.0 * loss1, rel=1e-12)


def test_loss_rejects_empty_mask():
    rng = np.random.default_rng(14)
    g, g_obs, part, window = make_instance(rng)
    params = ModelParams.init(SMALL, seed=12)
    with pytest.raises(InputError, match="empty"):
        loss_and_gradients(
            params, window, window.values, np.zeros_like(window.values),
            g, g_obs, SMALL,
        )


# -- checkpointing -----------------------------------------------------------

def test_checkpoint_roundtrip_bytes(tmp_path):
    params = ModelParams.init(SMALL, seed=13)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, params, SMALL)
    loaded, cfg = load_checkpoint(p1)
    assert cfg == SMALL
    save_checkpoint(p2, loaded, cfg)
    assert p1.read_bytes() == p2.read_bytes()
    # float32 storage: loaded arrays equal the float32 cast of originals
    for name, arr in params.arrays().items():
        assert np.array_equal(loaded.arrays()[name], arr.astype("<f4").astype(np.float64))


def test_checkpoint_shape_error_names_array(tmp_path):
    params = ModelParams.init(SMALL, seed=14)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, SMALL)
    import dirinet.arrayio as arrayio

    meta, arrays = arrayio.read_archive(path, "DGAE1")
    meta["length"] = 6  # shapes in the file no longer match the config
    arrayio.write_archive(path, "DGAE1", meta, arrays)
    with pytest.raises(CheckpointError, match="enc_in_w"):
        load_checkpoint(path)


def test_checkpoint_runs_on_different_graph(tmp_path):
    rng = np.random.default_rng(15)
    params = ModelParams.init(SMALL, seed=15)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, SMALL)
    loaded, cfg = load_checkpoint(path)
    g, g_obs, part, window = make_instance(rng, n=17, n_obs=9, cfg=cfg)
    est = forward(loaded, window, g, g_obs, cfg)
    assert est.shape == (17, cfg.length)
