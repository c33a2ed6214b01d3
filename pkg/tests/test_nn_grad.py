"""Central finite differences vs the hand-written backward passes."""

import numpy as np
import pytest

from camflow import nn
from camflow.model import Denoiser, ModelConfig, flow_matching_loss, flow_matching_loss_and_grads

MINI = ModelConfig(
    frame_size=4,
    patch=4,
    d_model=8,
    n_blocks=1,
    n_heads=2,
    mlp_ratio=2,
    chunk_frames=2,
    n_scenes=3,
    time_dim=16,
    w_feat_dim=8,
    enc_channels=(4, 6),
    dtype="float64",
)


def _central_diff(f, arr, eps=1e-6):
    g = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def _rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def test_linear_grad():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5, 4))
    W = rng.standard_normal((4, 6))
    b = rng.standard_normal(6)
    dy = rng.standard_normal((3, 5, 6))

    y, cache = nn.linear_fwd(x, W, b)
    dx, dW, db = nn.linear_bwd(dy, cache, W)

    def loss():
        return float((nn.linear_fwd(x, W, b)[0] * dy).sum())

    assert _rel_err(dx, _central_diff(loss, x)) < 1e-7
    assert _rel_err(dW, _central_diff(loss, W)) < 1e-7
    assert _rel_err(db, _central_diff(loss, b)) < 1e-7


def test_layernorm_grad():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 6))
    dy = rng.standard_normal((2, 3, 6))
    y, cache = nn.layernorm_fwd(x)
    dx = nn.layernorm_bwd(dy, cache)

    def loss():
        return float((nn.layernorm_fwd(x)[0] * dy).sum())

    assert _rel_err(dx, _central_diff(loss, x)) < 1e-6


@pytest.mark.parametrize("fwd,bwd", [(nn.gelu_fwd, nn.gelu_bwd), (nn.silu_fwd, nn.silu_bwd)])
def test_activation_grads(fwd, bwd):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 7)) * 2
    dy = rng.standard_normal((4, 7))
    _, cache = fwd(x)
    dx = bwd(dy, cache)

    def loss():
        return float((fwd(x)[0] * dy).sum())

    assert _rel_err(dx, _central_diff(loss, x)) < 1e-7


def test_attention_grad():
    rng = np.random.default_rng(3)
    B, T, D, H = 2, 5, 8, 2
    x = rng.standard_normal((B, T, D))
    Wqkv = rng.standard_normal((D, 3 * D)) * 0.3
    bqkv = rng.standard_normal(3 * D) * 0.1
    Wo = rng.standard_normal((D, D)) * 0.3
    bo = rng.standard_normal(D) * 0.1
    dy = rng.standard_normal((B, T, D))

    _, cache = nn.attention_fwd(x, Wqkv, bqkv, Wo, bo, H)
    dx, dWqkv, dbqkv, dWo, dbo = nn.attention_bwd(dy, cache, Wqkv, Wo, H)

    def loss():
        return float((nn.attention_fwd(x, Wqkv, bqkv, Wo, bo, H)[0] * dy).sum())

    assert _rel_err(dx, _central_diff(loss, x)) < 1e-6
    assert _rel_err(dWqkv, _central_diff(loss, Wqkv)) < 1e-6
    assert _rel_err(dbqkv, _central_diff(loss, bqkv)) < 1e-6
    assert _rel_err(dWo, _central_diff(loss, Wo)) < 1e-6
    assert _rel_err(dbo, _central_diff(loss, bo)) < 1e-6


def test_conv_grad():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 6, 6, 3))
    W = rng.standard_normal((27, 5)) * 0.3
    b = rng.standard_normal(5) * 0.1
    dy_shape_probe, _ = nn.conv2d_s2_fwd(x, W, b)
    dy = rng.standard_normal(dy_shape_probe.shape)

    _, cache = nn.conv2d_s2_fwd(x, W, b)
    dx, dW, db = nn.conv2d_s2_bwd(dy, cache, W)

    def loss():
        return float((nn.conv2d_s2_fwd(x, W, b)[0] * dy).sum())

    assert _rel_err(dx, _central_diff(loss, x)) < 1e-7
    assert _rel_err(dW, _central_diff(loss, W)) < 1e-7
    assert _rel_err(db, _central_diff(loss, b)) < 1e-7


def _mini_batch(model, rng, with_w=False):
    cfg = model.cfg
    B, F = 2, 3
    T = F * cfg.tokens_per_frame
    x1 = rng.standard_normal((B, T, cfg.d_model))
    x0 = rng.standard_normal((B, T, cfg.d_model))
    t = rng.uniform(0.1, 0.9, size=B)
    mask = np.zeros((B, T), dtype=np.int64)
    mask[:, : cfg.tokens_per_frame] = 1  # first frame is history
    grids = rng.standard_normal((B, F, cfg.frame_size // cfg.plucker_downsample,
                                 cfg.frame_size // cfg.plucker_downsample, 6))
    scene_ids = np.array([1, 2])
    w = rng.uniform(0.0, 4.0, size=B) if with_w else None
    return x1, x0, t, mask, grids, scene_ids, w


@pytest.mark.parametrize("with_w", [False, True])
def test_full_model_gradients_match_finite_differences(with_w):
    model = Denoiser(MINI)
    rng = np.random.default_rng(5)
    params = model.init_params(rng)
    # break the zero-init symmetry so gradients are informative
    for k, v in params.items():
        if v.ndim and not np.any(v):
            params[k] = rng.standard_normal(v.shape) * 0.05

    x1, x0, t, mask, grids, scene_ids, w = _mini_batch(model, rng, with_w)
    act_tokens, act_cache = model.encode_actions(params, grids)
    loss, grads, aux = flow_matching_loss_and_grads(
        model, params, x1, x0, t, act_tokens, mask, scene_ids, w=w, action_cache=act_cache
    )
    assert loss > 0
    assert set(grads) == set(params)

    def eval_loss():
        atk, _ = model.encode_actions(params, grids)
        return flow_matching_loss(model, params, x1, x0, t, atk, mask, scene_ids, w=w)

    for name in sorted(params):
        if not with_w and name in ("w_w", "w_b"):
            assert not np.any(grads[name])
            continue
        num = _central_diff(eval_loss, params[name], eps=1e-6)
        rel = _rel_err(grads[name], num)
        assert rel < 1e-3, f"{name}: rel err {rel:.2e}"


def test_head_region_target_gradient_exactly_zero():
    model = Denoiser(MINI)
    rng = np.random.default_rng(6)
    params = model.init_params(rng)
    x1, x0, t, mask, grids, scene_ids, _ = _mini_batch(model, rng)
    act_tokens, _ = model.encode_actions(params, grids)
    _, _, aux = flow_matching_loss_and_grads(
        model, params, x1, x0, t, act_tokens, mask, scene_ids
    )
    d_target = aux["d_target"]
    assert np.all(d_target[mask == 1] == 0.0)
    assert np.any(d_target[mask == 0] != 0.0)


def test_all_ones_mask_rejected():
    model = Denoiser(MINI)
    rng = np.random.default_rng(7)
    params = model.init_params(rng)
    x1, x0, t, mask, grids, scene_ids, _ = _mini_batch(model, rng)
    act_tokens, _ = model.encode_actions(params, grids)
    with pytest.raises(ValueError, match="mask"):
        flow_matching_loss(model, params, x1, x0, t, act_tokens, np.ones_like(mask), scene_ids)
