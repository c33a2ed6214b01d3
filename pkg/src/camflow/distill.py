"""Guidance distillation and phased consistency distillation.

The teacher is a trained chunk denoiser sampled with classifier-free
guidance (two evaluations per step).  Distillation folds the guidance
into a guidance-aware student (one evaluation per step) and compresses
the time axis into K phases so the student jumps phase boundaries,
giving K-evaluation sampling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import Denoiser, SampleStats
from .nn import Adam

__all__ = [
    "DistillConfig",
    "cfg_target",
    "cfg_distill_loss",
    "pcm_distill",
    "sample_distilled",
    "phase_of",
]


@dataclass
class DistillConfig:
    w_min: float = 0.0
    w_max: float = 4.0
    phases: int = 8
    steps: int = 800
    batch_size: int = 8
    lr: float = 5e-4
    seed: int = 0
    teacher_grid: int = 50  # fine Euler grid defining the teacher flow map
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def __post_init__(self):
        if self.phases < 1:
            raise ValueError("need at least one phase")
        if self.w_min < 0 or self.w_max < self.w_min:
            raise ValueError("bad guidance range")

    def boundaries(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.phases + 1)


def phase_of(t: float, boundaries: np.ndarray) -> int:
    """Index of the phase whose half-open interval [b_k, b_{k+1}) holds t."""
    k = int(np.searchsorted(boundaries, t, side="right") - 1)
    return min(max(k, 0), len(boundaries) - 2)


def cfg_target(
    model: Denoiser,
    teacher_params: dict,
    z_t: np.ndarray,
    t: np.ndarray,
    w: np.ndarray,
    action_tokens: np.ndarray,
    mask: np.ndarray,
    scene_ids: np.ndarray,
) -> np.ndarray:
    """Guided teacher velocity (1+w)*u(cond) - w*u(null)."""
    w = np.asarray(w, dtype=np.float64).reshape(-1, 1, 1)
    if (w < 0).any():
        raise ValueError("guidance weight must be >= 0")
    u_c = model.forward(teacher_params, z_t, t, action_tokens, mask, scene_ids)
    if not w.any():
        return u_c
    u_n = model.forward(
        teacher_params,
        z_t,
        t,
        np.zeros_like(action_tokens),
        mask,
        np.zeros_like(np.asarray(scene_ids)),
    )
    return (1.0 + w) * u_c - w * u_n


def cfg_distill_loss(
    model: Denoiser,
    student_params: dict,
    teacher_params: dict,
    batch: dict,
    rng: np.random.Generator,
    w_min: float = 0.0,
    w_max: float = 4.0,
    with_grads: bool = False,
):
    """MSE between the w-conditioned student velocity and the guided
    teacher velocity on a batch of interpolated states."""
    x1, x0, action_tokens, mask, scene_ids = (
        batch["x1"],
        batch["x0"],
        batch["action_tokens"],
        batch["mask"],
        batch["scene_ids"],
    )
    B = x1.shape[0]
    t = batch.get("t")
    if t is None:
        t = rng.uniform(0.0, 1.0, B)
    w = batch.get("w")
    if w is None:
        w = rng.uniform(w_min, w_max, B)
    tb = t.reshape(-1, 1, 1)
    z = np.where((mask == 1)[..., None], x1, (1 - tb) * x0 + tb * x1)
    target = cfg_target(model, teacher_params, z, t, w, action_tokens, mask, scene_ids)
    m0 = (mask == 0)[..., None]
    n = float(m0.sum()) * z.shape[-1]
    if not with_grads:
        u_s = model.forward(student_params, z, t, action_tokens, mask, scene_ids, w=w)
        r = np.where(m0, u_s - target, 0.0)
        return float((r.astype(np.float64) ** 2).sum() / n)
    u_s, cache = model.forward(
        student_params, z, t, action_tokens, mask, scene_ids, w=w, want_cache=True
    )
    r = np.where(m0, u_s - target, 0.0)
    loss = float((r.astype(np.float64) ** 2).sum() / n)
    grads, _, _ = model.backward(student_params, (2.0 / n) * r.astype(u_s.dtype), cache)
    return loss, grads


def _teacher_step(model, teacher_params, z, t, dt, w, action_tokens, mask, scene_ids):
    u = cfg_target(model, teacher_params, z, t, w, action_tokens, mask, scene_ids)
    head = (mask == 1)[..., None]
    return np.where(head, z, z + dt.reshape(-1, 1, 1) * u)


def _phase_jump(model, params, z, t, t_end, w, action_tokens, mask, scene_ids, want_cache=False):
    """Student phase-boundary prediction z + (t_end - t) * u_student."""
    out = model.forward(
        params, z, t, action_tokens, mask, scene_ids, w=w, want_cache=want_cache
    )
    u, cache = out if want_cache else (out, None)
    dt = (t_end - t).reshape(-1, 1, 1)
    head = (mask == 1)[..., None]
    jump = np.where(head, z, z + dt * u)
    return jump, u, cache, dt, head


def pcm_distill(
    model: Denoiser,
    teacher_params: dict,
    cfg: DistillConfig,
    batch_fn,
    log=None,
) -> dict:
    """Phased consistency distillation with a frozen-student bootstrap.

    ``batch_fn(rng) -> batch dict`` supplies training states (same keys
    as :func:`cfg_distill_loss`).  Within each phase the student learns
    to map any (z_t, t) to the phase-end state implied by one guided
    teacher step followed by the frozen student's own jump from the
    stepped point.  Returns the student parameters.
    """
    rng = np.random.default_rng(cfg.seed)
    student = {k: v.copy() for k, v in teacher_params.items()}
    opt = Adam(student, lr=cfg.lr)
    bounds = cfg.boundaries()
    initial_loss = None
    runaway = 0
    t_start = time.time()
    for step in range(cfg.steps):
        batch = batch_fn(rng)
        x1, x0 = batch["x1"], batch["x0"]
        action_tokens, mask, scene_ids = (
            batch["action_tokens"],
            batch["mask"],
            batch["scene_ids"],
        )
        B = x1.shape[0]
        w = rng.uniform(cfg.w_min, cfg.w_max, B)
        ks = rng.integers(0, cfg.phases, B)
        t_lo, t_hi = bounds[ks], bounds[ks + 1]
        t = rng.uniform(t_lo, t_hi)
        t_end = t_hi
        tb = t.reshape(-1, 1, 1)
        z = np.where((mask == 1)[..., None], x1, (1 - tb) * x0 + tb * x1)

        # one fine-grid guided teacher step, then the frozen student
        # jumps the rest of the phase: the fixed point is the teacher's
        # fine-grid flow map to the phase boundary
        delta = np.minimum(t_end - t, 1.0 / cfg.teacher_grid)
        z_stepped = _teacher_step(
            model, teacher_params, z, t, delta, w, action_tokens, mask, scene_ids
        )
        t_stepped = t + delta
        target, _, _, _, _ = _phase_jump(
            model, student, z_stepped, t_stepped, t_end, w, action_tokens, mask, scene_ids
        )

        pred, u, cache, dt, head = _phase_jump(
            model, student, z, t, t_end, w, action_tokens, mask, scene_ids, want_cache=True
        )
        m0 = ~head
        n = float(m0.sum())
        r = np.where(m0, pred - target, 0.0)
        loss = float((r.astype(np.float64) ** 2).sum() / n)
        d_u = (2.0 / n) * (r * dt).astype(u.dtype)
        grads, _, _ = model.backward(student, d_u, cache)
        opt.step(student, grads)

        if initial_loss is None:
            initial_loss = max(loss, 1e-12)
        if loss > cfg.divergence_factor * initial_loss:
            runaway += 1
            if runaway >= cfg.divergence_patience:
                raise RuntimeError(
                    f"distillation diverged: loss {loss:.3g} stayed above "
                    f"{cfg.divergence_factor}x initial for {runaway} steps"
                )
        else:
            runaway = 0
        if log is not None and (step % 50 == 0 or step == cfg.steps - 1):
            log.append({"step": step, "loss": loss, "wallclock": time.time() - t_start})
    return student


def sample_distilled(
    model: Denoiser,
    student_params: dict,
    action_tokens: np.ndarray,
    mask: np.ndarray,
    head_tokens: np.ndarray | None,
    phases: int,
    guidance: float,
    scene_ids: np.ndarray,
    rng: np.random.Generator,
):
    """K-evaluation sampling: one student phase jump per phase."""
    cfg = model.cfg
    mask = np.asarray(mask)
    B, T = mask.shape
    z = rng.standard_normal((B, T, cfg.d_model)).astype(cfg.np_dtype)
    head_sel = mask == 1
    if head_sel.any():
        if head_tokens is None:
            raise ValueError("mask marks head positions but no head tokens given")
        z[head_sel] = head_tokens.reshape(-1, cfg.d_model).astype(cfg.np_dtype)
    stats = SampleStats(steps=phases, guidance=guidance)
    bounds = np.linspace(0.0, 1.0, phases + 1)
    w = np.full(B, guidance, dtype=np.float64)
    for k in range(phases):
        t = np.full(B, bounds[k])
        z, _, _, _, _ = _phase_jump(
            model, student_params, z, t, np.full(B, bounds[k + 1]), w,
            action_tokens, mask, scene_ids,
        )
        stats.denoiser_evals += 1
        if not np.all(np.isfinite(z)):
            raise RuntimeError(f"non-finite state at distilled step {k}")
    return z, stats
