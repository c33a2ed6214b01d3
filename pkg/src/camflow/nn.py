"""Minimal numpy neural-net layers with explicit forward/backward pairs.

Every layer returns (output, cache); the matching backward consumes the
cache and the upstream gradient and returns input/parameter gradients.
Analytic gradients are verified against central finite differences in
the test suite, so keep forward and backward in lockstep when editing.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "linear_fwd",
    "linear_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "silu_fwd",
    "silu_bwd",
    "attention_fwd",
    "attention_bwd",
    "conv2d_s2_fwd",
    "conv2d_s2_bwd",
    "timestep_features",
    "sincos_positions_3d",
    "Adam",
]

_GELU_C = math.sqrt(2.0 / math.pi)


def linear_fwd(x, W, b=None):
    y = x @ W
    if b is not None:
        y = y + b
    return y, x


def linear_bwd(dy, x, W, has_bias=True):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dW = x2.T @ dy2
    db = dy2.sum(0) if has_bias else None
    dx = dy @ W.T
    return dx, dW, db


def layernorm_fwd(x, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat, (xhat, inv)


def layernorm_bwd(dy, cache):
    xhat, inv = cache
    m1 = dy.mean(-1, keepdims=True)
    m2 = (dy * xhat).mean(-1, keepdims=True)
    return inv * (dy - m1 - xhat * m2)


def gelu_fwd(x):
    x2 = x * x
    u = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)
    return y, (x, t)


def gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def silu_fwd(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s, (x, s)


def silu_bwd(dy, cache):
    x, s = cache
    return dy * s * (1.0 + x * (1.0 - s))


def _softmax_last(x):
    m = x.max(-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(-1, keepdims=True)


def attention_fwd(x, Wqkv, bqkv, Wo, bo, n_heads):
    """Full multi-head self-attention over (B, T, D) tokens."""
    B, T, D = x.shape
    dh = D // n_heads
    qkv = x.reshape(-1, D) @ Wqkv + bqkv  # (B*T, 3D)
    qkv = qkv.reshape(B, T, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]  # (B, H, T, dh)
    scale = 1.0 / math.sqrt(dh)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = _softmax_last(scores)
    ctx = probs @ v  # (B, H, T, dh)
    merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, D)
    out = merged.reshape(-1, D) @ Wo + bo
    return out.reshape(B, T, D), (x, q, k, v, probs, merged)


def attention_bwd(dy, cache, Wqkv, Wo, n_heads):
    x, q, k, v, probs, merged = cache
    B, T, D = x.shape
    dh = D // n_heads
    scale = 1.0 / math.sqrt(dh)

    dy2 = dy.reshape(-1, D)
    dWo = merged.reshape(-1, D).T @ dy2
    dbo = dy2.sum(0)
    dmerged = (dy2 @ Wo.T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    dprobs = dmerged @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dmerged
    # softmax backward on the last axis
    dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
    dscores *= scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    dqkv = np.stack([dq, dk, dv], 0).transpose(1, 3, 0, 2, 4).reshape(B * T, 3 * D)
    dWqkv = x.reshape(-1, D).T @ dqkv
    dbqkv = dqkv.sum(0)
    dx = (dqkv @ Wqkv.T).reshape(B, T, D)
    return dx, dWqkv, dbqkv, dWo, dbo


def conv2d_s2_fwd(x, W, b):
    """3x3 stride-2 pad-1 convolution on channels-last (N, H, W, C)."""
    N, H, Wd, C = x.shape
    Ho, Wo_ = (H + 1) // 2, (Wd + 1) // 2
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((N, Ho, Wo_, 9, C), dtype=x.dtype)
    for a in range(3):
        for bb in range(3):
            cols[:, :, :, a * 3 + bb, :] = xp[:, a : a + 2 * Ho : 2, bb : bb + 2 * Wo_ : 2, :]
    cols2 = cols.reshape(N, Ho, Wo_, 9 * C)
    y = cols2 @ W.reshape(9 * C, -1) + b
    return y, (cols2, x.shape)


def conv2d_s2_bwd(dy, cache, W):
    cols2, xshape = cache
    N, H, Wd, C = xshape
    Ho, Wo_ = (H + 1) // 2, (Wd + 1) // 2
    Cout = dy.shape[-1]
    dy2 = dy.reshape(-1, Cout)
    dW = (cols2.reshape(-1, 9 * C).T @ dy2).reshape(9, C, Cout).reshape(9 * C, Cout)
    db = dy2.sum(0)
    dcols = (dy2 @ W.reshape(9 * C, Cout).T).reshape(N, Ho, Wo_, 9, C)
    dxp = np.zeros((N, H + 2, Wd + 2, C), dtype=dy.dtype)
    for a in range(3):
        for bb in range(3):
            dxp[:, a : a + 2 * Ho : 2, bb : bb + 2 * Wo_ : 2, :] += dcols[:, :, :, a * 3 + bb, :]
    return dxp[:, 1:-1, 1:-1, :], dW, db


def timestep_features(t, dim=128, max_period=10_000.0):
    """Standard sinusoidal features of a scalar in [0, 1]-ish range."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :] * 1000.0
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=1)


def _sincos_1d(n, dim):
    pos = np.arange(n, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(10_000.0) * np.arange(half) / max(half, 1))
    ang = pos[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)  # (n, dim)


def sincos_positions_3d(f, h, w, dim):
    """Fixed additive positions for an (f, h, w) token lattice."""
    df = dim // 3
    dh = dim // 3
    dw = dim - df - dh
    df -= df % 2
    dh -= dh % 2
    dw = dim - df - dh
    ef = _sincos_1d(f, df)
    eh = _sincos_1d(h, dh)
    ew = _sincos_1d(w, dw)
    out = np.zeros((f, h, w, dim))
    out[..., :df] = ef[:, None, None, :]
    out[..., df : df + dh] = eh[None, :, None, :]
    out[..., df + dh :] = ew[None, None, :, :]
    return out.reshape(f * h * w, dim)


class Adam:
    """Plain Adam over a dict of named parameter arrays."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for k, g in grads.items():
            if self.weight_decay:
                g = g + self.weight_decay * params[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
