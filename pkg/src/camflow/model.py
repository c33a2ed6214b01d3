"""Flow-matching chunk denoiser: frozen DCT patch tokenizer, lightweight
action-grid encoder with a learnable injection scale, and a small
adaLN-modulated transformer predicting per-token velocities.

The token space is the image of a fixed orthonormal (truncated) DCT
projection of pixel patches, so flow-matching targets stay stationary
while the transformer trains; the projection plays the role a frozen
video autoencoder would play at production scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import nn

__all__ = [
    "ModelConfig",
    "Denoiser",
    "SampleStats",
    "flow_matching_loss",
    "flow_matching_loss_and_grads",
    "sample",
]


@dataclass(frozen=True)
class ModelConfig:
    frame_size: int = 64
    patch: int = 8
    d_model: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    chunk_frames: int = 8
    n_scenes: int = 32
    gamma_init: float = 0.1
    latent_scale: float = 0.5
    time_dim: int = 128
    w_feat_dim: int = 64
    enc_channels: tuple = (16, 32)
    dtype: str = "float32"

    def __post_init__(self):
        if self.frame_size % self.patch:
            raise ValueError("patch must divide frame_size")
        if self.d_model % self.n_heads:
            raise ValueError("n_heads must divide d_model")
        if self.patch % 4:
            raise ValueError("patch must be a multiple of 4 (conv stride schedule)")

    @property
    def tokens_per_side(self) -> int:
        return self.frame_size // self.patch

    @property
    def tokens_per_frame(self) -> int:
        return self.tokens_per_side**2

    @property
    def chunk_tokens(self) -> int:
        return self.chunk_frames * self.tokens_per_frame

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * 3

    @property
    def plucker_downsample(self) -> int:
        # two stride-2 convs reduce the grid to the token lattice
        return self.patch // 4

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        if "enc_channels" in doc:
            doc["enc_channels"] = tuple(doc["enc_channels"])
        return cls(**doc)


def _dct_matrix(p: int) -> np.ndarray:
    k = np.arange(p)[:, None]
    n = np.arange(p)[None, :]
    M = np.cos(math.pi * (n + 0.5) * k / p)
    M[0] *= 1.0 / math.sqrt(p)
    M[1:] *= math.sqrt(2.0 / p)
    return M  # rows orthonormal


def build_dct_basis(patch: int, d: int) -> np.ndarray:
    """(d, patch*patch*3) orthonormal rows ordered by 2D frequency then
    channel; rows beyond the patch dimension are zero."""
    M = _dct_matrix(patch)
    order = sorted(
        ((k1 + k2, k1, c) for k1 in range(patch) for k2 in range(patch) for c in range(3))
    )
    basis = np.zeros((d, patch * patch * 3))
    for row, (_, k1, c) in enumerate(order[: min(d, patch * patch * 3)]):
        k2 = order[row][0] - k1
        vec = np.zeros((patch, patch, 3))
        vec[:, :, c] = np.outer(M[k1], M[k2])
        basis[row] = vec.reshape(-1)
    return basis


@dataclass
class SampleStats:
    steps: int = 0
    denoiser_evals: int = 0
    guidance: float = 0.0


class Denoiser:
    """Config plus constant buffers; trainable state lives in a plain
    dict of named arrays so optimizers and checkpoints stay dumb."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.basis = build_dct_basis(cfg.patch, cfg.d_model)
        self._pos_cache: dict = {}

    # ------------------------------------------------------------------
    # parameters

    def init_params(self, rng: np.random.Generator) -> dict:
        cfg = self.cfg
        D = cfg.d_model
        dt = cfg.np_dtype

        def norm(*shape, std=0.02):
            return (rng.standard_normal(shape) * std).astype(dt)

        def zeros(*shape):
            return np.zeros(shape, dtype=dt)

        p: dict = {}
        p["time_w1"] = norm(cfg.time_dim, D)
        p["time_b1"] = zeros(D)
        p["time_w2"] = norm(D, D)
        p["time_b2"] = zeros(D)
        p["scene_emb"] = norm(cfg.n_scenes + 1, D)
        p["mask_emb"] = norm(2, D)
        p["w_w"] = zeros(cfg.w_feat_dim, D)
        p["w_b"] = zeros(D)
        c1, c2 = cfg.enc_channels
        p["act_conv1_w"] = norm(9 * 6, c1, std=math.sqrt(2.0 / (9 * 6)))
        p["act_conv1_b"] = zeros(c1)
        p["act_conv2_w"] = norm(9 * c1, c2, std=math.sqrt(2.0 / (9 * c1)))
        p["act_conv2_b"] = zeros(c2)
        p["act_proj_w"] = norm(c2, D)
        p["act_proj_b"] = zeros(D)
        p["act_gamma"] = np.full((), cfg.gamma_init, dtype=dt)
        for i in range(cfg.n_blocks):
            p[f"blk{i}.qkv_w"] = norm(D, 3 * D)
            p[f"blk{i}.qkv_b"] = zeros(3 * D)
            p[f"blk{i}.out_w"] = norm(D, D)
            p[f"blk{i}.out_b"] = zeros(D)
            p[f"blk{i}.mlp_w1"] = norm(D, cfg.mlp_ratio * D)
            p[f"blk{i}.mlp_b1"] = zeros(cfg.mlp_ratio * D)
            p[f"blk{i}.mlp_w2"] = norm(cfg.mlp_ratio * D, D)
            p[f"blk{i}.mlp_b2"] = zeros(D)
            p[f"blk{i}.mod_w"] = zeros(D, 6 * D)  # adaLN-zero
            p[f"blk{i}.mod_b"] = zeros(6 * D)
        p["final_mod_w"] = zeros(D, 2 * D)
        p["final_mod_b"] = zeros(2 * D)
        p["head_w"] = zeros(D, D)  # zero velocity at init
        p["head_b"] = zeros(D)
        return p

    # ------------------------------------------------------------------
    # tokenizer (frozen)

    def frames_to_patches(self, frames: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        p = cfg.patch
        *lead, H, W, C = frames.shape
        h, w = H // p, W // p
        x = frames.reshape(*lead, h, p, w, p, C)
        x = np.moveaxis(x, -4, -3)  # (..., h, w, p, p, C)
        return x.reshape(*lead, h, w, p * p * C)

    def patches_to_frames(self, patches: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        p = cfg.patch
        *lead, h, w, pd = patches.shape
        x = patches.reshape(*lead, h, w, p, p, 3)
        x = np.moveaxis(x, -3, -4)  # (..., h, p, w, p, 3)
        return x.reshape(*lead, h * p, w * p, 3)

    def patchify(self, frames: np.ndarray) -> np.ndarray:
        """(..., F, H, W, 3) frames -> (..., F*h*w, D) tokens."""
        cfg = self.cfg
        centered = (np.asarray(frames, dtype=np.float64) - 0.5) * 2.0
        patches = self.frames_to_patches(centered)
        tokens = patches @ self.basis.T * cfg.latent_scale
        *lead, F, h, w, D = tokens.shape
        return tokens.reshape(*lead, F * h * w, D).astype(cfg.np_dtype)

    def unpatchify(self, tokens: np.ndarray, n_frames: int) -> np.ndarray:
        cfg = self.cfg
        hw = cfg.tokens_per_side
        *lead, T, D = tokens.shape
        t = tokens.reshape(*lead, n_frames, hw, hw, D).astype(np.float64)
        patches = (t / cfg.latent_scale) @ self.basis
        frames = self.patches_to_frames(patches)
        return (frames / 2.0 + 0.5).astype(np.float32)

    # ------------------------------------------------------------------
    # action encoder

    def encode_actions(self, params: dict, grids: np.ndarray, pool: int = 1):
        """Plücker grids (B, F, G, G, 6) -> action tokens (B, T, D)."""
        cfg = self.cfg
        B, F, G, G2, C = grids.shape
        if G != G2 or C != 6:
            raise ValueError("grids must be (B, F, G, G, 6)")
        if G // 4 != cfg.tokens_per_side:
            raise ValueError(
                f"grid size {G} does not reduce to the {cfg.tokens_per_side}-token lattice"
            )
        if F % pool:
            raise ValueError("temporal pool must divide the frame count")
        x = grids.reshape(B * F, G, G, 6).astype(cfg.np_dtype)
        h1, cc1 = nn.conv2d_s2_fwd(x, params["act_conv1_w"], params["act_conv1_b"])
        a1, ca1 = nn.gelu_fwd(h1)
        h2, cc2 = nn.conv2d_s2_fwd(a1, params["act_conv2_w"], params["act_conv2_b"])
        a2, ca2 = nn.gelu_fwd(h2)
        hw = cfg.tokens_per_side
        a2 = a2.reshape(B, F, hw, hw, -1)
        if pool > 1:
            a2 = a2.reshape(B, F // pool, pool, hw, hw, -1).mean(2)
        proj, cp = nn.linear_fwd(a2, params["act_proj_w"], params["act_proj_b"])
        out = proj * params["act_gamma"]
        Fp = a2.shape[1]
        cache = (cc1, ca1, cc2, ca2, cp, proj, pool, (B, F, G))
        return out.reshape(B, Fp * hw * hw, cfg.d_model), cache

    def encode_actions_bwd(self, params: dict, d_tokens: np.ndarray, cache):
        cfg = self.cfg
        cc1, ca1, cc2, ca2, cp, proj, pool, (B, F, G) = cache
        hw = cfg.tokens_per_side
        d = d_tokens.reshape(B, -1, hw, hw, cfg.d_model)
        grads = {}
        grads["act_gamma"] = np.array((d * proj).sum(), dtype=cfg.np_dtype)
        d = d * params["act_gamma"]
        d, grads["act_proj_w"], grads["act_proj_b"] = nn.linear_bwd(
            d, cp, params["act_proj_w"]
        )
        if pool > 1:
            d = np.repeat(d[:, :, None] / pool, pool, axis=2).reshape(
                B, F, hw, hw, -1
            )
        d = d.reshape(B * F, hw, hw, -1)
        d = nn.gelu_bwd(d, ca2)
        d, grads["act_conv2_w"], grads["act_conv2_b"] = nn.conv2d_s2_bwd(
            d, cc2, params["act_conv2_w"]
        )
        d = nn.gelu_bwd(d, ca1)
        _, grads["act_conv1_w"], grads["act_conv1_b"] = nn.conv2d_s2_bwd(
            d, cc1, params["act_conv1_w"]
        )
        return grads

    # ------------------------------------------------------------------
    # transformer

    def positions(self, n_frames: int) -> np.ndarray:
        cfg = self.cfg
        key = n_frames
        if key not in self._pos_cache:
            hw = cfg.tokens_per_side
            self._pos_cache[key] = nn.sincos_positions_3d(
                n_frames, hw, hw, cfg.d_model
            ).astype(cfg.np_dtype)
        return self._pos_cache[key]

    def forward(
        self,
        params: dict,
        z_t: np.ndarray,
        t: np.ndarray,
        action_tokens: np.ndarray,
        mask: np.ndarray,
        scene_ids: np.ndarray,
        w: np.ndarray | None = None,
        want_cache: bool = False,
    ):
        """Velocity field u(z_t, t, conditions); shapes (B, T, D)."""
        cfg = self.cfg
        D = cfg.d_model
        z_t = np.asarray(z_t, dtype=cfg.np_dtype)
        if not np.all(np.isfinite(z_t)):
            raise ValueError("non-finite denoiser input")
        B, T, _ = z_t.shape
        if T % cfg.tokens_per_frame:
            raise ValueError("token count is not a whole number of frames")
        mask = np.asarray(mask)
        if mask.shape != (B, T) or not np.isin(mask, (0, 1)).all():
            raise ValueError("mask must be a binary (B, T) array")
        n_frames = T // cfg.tokens_per_frame

        tf = nn.timestep_features(t, cfg.time_dim).astype(cfg.np_dtype)
        h1, c_t1 = nn.linear_fwd(tf, params["time_w1"], params["time_b1"])
        a1, c_ta = nn.silu_fwd(h1)
        c, c_t2 = nn.linear_fwd(a1, params["time_w2"], params["time_b2"])
        scene_ids = np.asarray(scene_ids, dtype=np.int64)
        c = c + params["scene_emb"][scene_ids]
        wf = None
        if w is not None:
            wf = nn.timestep_features(w, cfg.w_feat_dim).astype(cfg.np_dtype)
            c = c + wf @ params["w_w"] + params["w_b"]
        m, c_m = nn.silu_fwd(c)

        x = z_t + action_tokens + params["mask_emb"][mask] + self.positions(n_frames)[None]

        blocks = []
        for i in range(cfg.n_blocks):
            pre = f"blk{i}."
            mods, c_mod = nn.linear_fwd(m, params[pre + "mod_w"], params[pre + "mod_b"])
            sh1, sc1, g1, sh2, sc2, g2 = np.split(mods[:, None, :], 6, axis=-1)
            hn, c_ln1 = nn.layernorm_fwd(x)
            hmod = hn * (1.0 + sc1) + sh1
            attn, c_att = nn.attention_fwd(
                hmod,
                params[pre + "qkv_w"],
                params[pre + "qkv_b"],
                params[pre + "out_w"],
                params[pre + "out_b"],
                cfg.n_heads,
            )
            x = x + g1 * attn
            hn2, c_ln2 = nn.layernorm_fwd(x)
            hmod2 = hn2 * (1.0 + sc2) + sh2
            f1, c_f1 = nn.linear_fwd(hmod2, params[pre + "mlp_w1"], params[pre + "mlp_b1"])
            fa, c_fa = nn.gelu_fwd(f1)
            f2, c_f2 = nn.linear_fwd(fa, params[pre + "mlp_w2"], params[pre + "mlp_b2"])
            x = x + g2 * f2
            blocks.append(
                (c_mod, (sh1, sc1, g1, sh2, sc2, g2), c_ln1, hn, c_att, attn, c_ln2, hn2, c_f1, c_fa, c_f2, f2)
            )

        modsf, c_modf = nn.linear_fwd(m, params["final_mod_w"], params["final_mod_b"])
        shf, scf = np.split(modsf[:, None, :], 2, axis=-1)
        hnf, c_lnf = nn.layernorm_fwd(x)
        hf = hnf * (1.0 + scf) + shf
        u, c_head = nn.linear_fwd(hf, params["head_w"], params["head_b"])

        if not want_cache:
            return u
        cache = {
            "t": (c_t1, c_ta, c_t2, c_m, tf, wf),
            "scene_ids": scene_ids,
            "mask": mask,
            "blocks": blocks,
            "final": (c_modf, shf, scf, c_lnf, hnf, c_head),
            "m": m,
            "w_given": w is not None,
        }
        return u, cache

    def backward(self, params: dict, d_u: np.ndarray, cache):
        """Gradients of a scalar loss through :meth:`forward`.

        Returns (grads, d_z, d_action_tokens); d_z equals the gradient
        w.r.t. the raw token input (action tokens share it since the
        injection is a plain addition).
        """
        cfg = self.cfg
        grads: dict = {}
        c_modf, shf, scf, c_lnf, hnf, c_head = cache["final"]
        dhf, grads["head_w"], grads["head_b"] = nn.linear_bwd(d_u, c_head, params["head_w"])
        d_shf = dhf.sum(axis=1, keepdims=True)
        d_scf = (dhf * hnf).sum(axis=1, keepdims=True)
        dhnf = dhf * (1.0 + scf)
        dx = nn.layernorm_bwd(dhnf, c_lnf)
        d_modsf = np.concatenate([d_shf, d_scf], axis=-1)[:, 0, :]
        dm, grads["final_mod_w"], grads["final_mod_b"] = nn.linear_bwd(
            d_modsf, c_modf, params["final_mod_w"]
        )

        for i in reversed(range(cfg.n_blocks)):
            pre = f"blk{i}."
            (c_mod, mods6, c_ln1, hn, c_att, attn, c_ln2, hn2, c_f1, c_fa, c_f2, f2) = cache["blocks"][i]
            sh1, sc1, g1, sh2, sc2, g2 = mods6

            d_g2 = (dx * f2).sum(axis=1, keepdims=True)
            d_f2 = dx * g2
            d_fa, grads[pre + "mlp_w2"], grads[pre + "mlp_b2"] = nn.linear_bwd(
                d_f2, c_f2, params[pre + "mlp_w2"]
            )
            d_f1 = nn.gelu_bwd(d_fa, c_fa)
            d_hmod2, grads[pre + "mlp_w1"], grads[pre + "mlp_b1"] = nn.linear_bwd(
                d_f1, c_f1, params[pre + "mlp_w1"]
            )
            d_sh2 = d_hmod2.sum(axis=1, keepdims=True)
            d_sc2 = (d_hmod2 * hn2).sum(axis=1, keepdims=True)
            d_hn2 = d_hmod2 * (1.0 + sc2)
            dx = dx + nn.layernorm_bwd(d_hn2, c_ln2)

            d_g1 = (dx * attn).sum(axis=1, keepdims=True)
            d_attn = dx * g1
            d_hmod, dWqkv, dbqkv, dWo, dbo = nn.attention_bwd(
                d_attn, c_att, params[pre + "qkv_w"], params[pre + "out_w"], cfg.n_heads
            )
            grads[pre + "qkv_w"] = dWqkv
            grads[pre + "qkv_b"] = dbqkv
            grads[pre + "out_w"] = dWo
            grads[pre + "out_b"] = dbo
            d_sh1 = d_hmod.sum(axis=1, keepdims=True)
            d_sc1 = (d_hmod * hn).sum(axis=1, keepdims=True)
            d_hn = d_hmod * (1.0 + sc1)
            dx = dx + nn.layernorm_bwd(d_hn, c_ln1)

            d_mods = np.concatenate([d_sh1, d_sc1, d_g1, d_sh2, d_sc2, d_g2], axis=-1)[:, 0, :]
            dm_i, grads[pre + "mod_w"], grads[pre + "mod_b"] = nn.linear_bwd(
                d_mods, c_mod, params[pre + "mod_w"]
            )
            dm = dm + dm_i

        # token-input paths
        mask = cache["mask"]
        grads["mask_emb"] = np.zeros_like(params["mask_emb"])
        np.add.at(grads["mask_emb"], mask.reshape(-1), dx.reshape(-1, cfg.d_model))
        d_z = dx
        d_action = dx

        # conditioning path
        c_t1, c_ta, c_t2, c_m, tf, wf = cache["t"]
        dc = nn.silu_bwd(dm, c_m)
        if cache["w_given"]:
            grads["w_w"] = wf.T @ dc
            grads["w_b"] = dc.sum(0)
        else:
            grads["w_w"] = np.zeros_like(params["w_w"])
            grads["w_b"] = np.zeros_like(params["w_b"])
        grads["scene_emb"] = np.zeros_like(params["scene_emb"])
        np.add.at(grads["scene_emb"], cache["scene_ids"], dc)
        da1, grads["time_w2"], grads["time_b2"] = nn.linear_bwd(dc, c_t2, params["time_w2"])
        dh1 = nn.silu_bwd(da1, c_ta)
        _, grads["time_w1"], grads["time_b1"] = nn.linear_bwd(dh1, c_t1, params["time_w1"])
        return grads, d_z, d_action


# ---------------------------------------------------------------------------
# training objective


def _interp_state(x1, x0, t, mask):
    tb = np.asarray(t).reshape(-1, 1, 1)
    z = (1.0 - tb) * x0 + tb * x1
    head = mask[..., None] == 1
    return np.where(head, x1, z)


def flow_matching_loss(
    model: Denoiser,
    params: dict,
    x1: np.ndarray,
    x0: np.ndarray,
    t: np.ndarray,
    action_tokens: np.ndarray,
    mask: np.ndarray,
    scene_ids: np.ndarray,
    w: np.ndarray | None = None,
    velocity=None,
) -> float:
    """Masked rectified-flow MSE; history tokens stay clean and carry no
    loss.  ``velocity`` overrides the model output (stub hook)."""
    loss, _ = _fm_loss_core(
        model, params, x1, x0, t, action_tokens, mask, scene_ids, w, velocity, False
    )
    return loss


def _fm_loss_core(
    model, params, x1, x0, t, action_tokens, mask, scene_ids, w, velocity, want_cache
):
    mask = np.asarray(mask)
    if (mask == 1).all():
        raise ValueError("all-ones mask: nothing to denoise")
    z = _interp_state(x1, x0, t, mask)
    cache = None
    if velocity is not None:
        u = velocity(z, t)
    elif want_cache:
        u, cache = model.forward(
            params, z, t, action_tokens, mask, scene_ids, w=w, want_cache=True
        )
    else:
        u = model.forward(params, z, t, action_tokens, mask, scene_ids, w=w)
    v_star = x1 - x0
    m0 = (mask == 0)[..., None]
    n = float(m0.sum()) * u.shape[-1]
    r = np.where(m0, u - v_star, 0.0)
    loss = float((r.astype(np.float64) ** 2).sum() / n)
    return loss, (r, n, cache, u, v_star, m0, z)


def flow_matching_loss_and_grads(
    model: Denoiser,
    params: dict,
    x1: np.ndarray,
    x0: np.ndarray,
    t: np.ndarray,
    action_tokens: np.ndarray,
    mask: np.ndarray,
    scene_ids: np.ndarray,
    w: np.ndarray | None = None,
    action_cache=None,
):
    """Loss plus analytic gradients; if ``action_cache`` from
    :meth:`Denoiser.encode_actions` is given, encoder gradients are
    chained in.  Returns (loss, grads, aux) where aux exposes
    ``d_target`` (gradient w.r.t. the regression target, exactly zero on
    head positions) for the isolation checks."""
    loss, (r, n, cache, u, v_star, m0, z) = _fm_loss_core(
        model, params, x1, x0, t, action_tokens, mask, scene_ids, w, None, True
    )
    d_u = (2.0 / n) * r
    grads, d_z, d_action = model.backward(params, d_u, cache)
    if action_cache is not None:
        enc_grads = model.encode_actions_bwd(params, d_action, action_cache)
        grads.update(enc_grads)
    aux = {
        "d_target": -d_u,
        "d_z": d_z,
        "d_action_tokens": d_action,
        "velocity": u,
    }
    return loss, grads, aux


# ---------------------------------------------------------------------------
# sampling


def sample(
    model: Denoiser,
    params: dict,
    action_tokens: np.ndarray,
    mask: np.ndarray,
    head_tokens: np.ndarray | None,
    steps: int,
    guidance: float,
    scene_ids: np.ndarray,
    rng: np.random.Generator,
    w_cond: np.ndarray | None = None,
    velocity_fn=None,
):
    """Euler integration of the guided velocity from noise (t=0) to data
    (t=1) over the masked-out region; head tokens are pinned to their
    clean values at every step.

    Returns (tokens (B, T, D), SampleStats).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if guidance < 0:
        raise ValueError("guidance weight must be >= 0")
    cfg = model.cfg
    mask = np.asarray(mask)
    B, T = mask.shape
    D = cfg.d_model
    z = rng.standard_normal((B, T, D)).astype(cfg.np_dtype)
    head_sel = mask == 1
    if head_sel.any():
        if head_tokens is None:
            raise ValueError("mask marks head positions but no head tokens given")
        z[head_sel] = head_tokens.reshape(-1, D).astype(cfg.np_dtype)
    stats = SampleStats(steps=steps, guidance=guidance)
    null_actions = np.zeros_like(action_tokens)
    null_scenes = np.zeros_like(np.asarray(scene_ids))
    dt = 1.0 / steps
    for k in range(steps):
        t = np.full(B, k * dt)
        if velocity_fn is not None:
            u = velocity_fn(z, t)
            stats.denoiser_evals += 1
        elif guidance == 0.0:
            u = model.forward(params, z, t, action_tokens, mask, scene_ids, w=w_cond)
            stats.denoiser_evals += 1
        else:
            u_c = model.forward(params, z, t, action_tokens, mask, scene_ids, w=w_cond)
            u_n = model.forward(params, z, t, null_actions, mask, null_scenes, w=w_cond)
            u = (1.0 + guidance) * u_c - guidance * u_n
            stats.denoiser_evals += 2
        upd = z + dt * u.astype(cfg.np_dtype)
        z = np.where(head_sel[..., None], z, upd)
        if not np.all(np.isfinite(z)):
            raise RuntimeError(f"non-finite state at sampler step {k}")
    return z, stats
