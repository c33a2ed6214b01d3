"""Continuous camera action space and keyboard/mouse unification.

An action is a pair of unit direction vectors (translation in the camera
frame, angular rates) plus per-frame speed scalars.  Keyboard state and
mouse deltas map onto this space; actions interpolate smoothly on the
sphere so held keys can blend into each other without jumps.

Conventions
-----------
Camera frame: x = right, y = up, z = forward.
Rotation rates: ``d_rot = (pitch_rate, yaw_rate, roll_rate)`` with the
roll component identically zero.  +yaw turns left (toward world +x when
facing +z is yaw 0 ... see :mod:`camflow.camera`), +pitch looks up.
Mouse: +dx (right) turns right, +dy (down) looks down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Action",
    "KeyState",
    "ControlConfig",
    "NULL_ACTION",
    "keys_to_action",
    "blend_actions",
    "invert_action",
]

_UNIT_TOL = 1e-9

# camera-frame basis vector per translation key
_KEY_TRANS = {
    "W": np.array([0.0, 0.0, 1.0]),
    "S": np.array([0.0, 0.0, -1.0]),
    "A": np.array([-1.0, 0.0, 0.0]),
    "D": np.array([1.0, 0.0, 0.0]),
    "Space": np.array([0.0, 1.0, 0.0]),
    "Ctrl": np.array([0.0, -1.0, 0.0]),
}

# (pitch_rate, yaw_rate, roll_rate) contribution per rotation key
_KEY_ROT = {
    "Up": np.array([1.0, 0.0, 0.0]),
    "Down": np.array([-1.0, 0.0, 0.0]),
    "Left": np.array([0.0, 1.0, 0.0]),
    "Right": np.array([0.0, -1.0, 0.0]),
}

KEY_VOCABULARY = frozenset(_KEY_TRANS) | frozenset(_KEY_ROT)


@dataclass(frozen=True)
class Action:
    """A point of the continuous action space.

    ``d_trans`` and ``d_rot`` are unit vectors (or exactly zero for the
    null component); ``alpha``/``beta`` are nonnegative speeds in world
    units respectively radians per frame.
    """

    d_trans: np.ndarray
    d_rot: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "d_trans", np.asarray(self.d_trans, dtype=np.float64))
        object.__setattr__(self, "d_rot", np.asarray(self.d_rot, dtype=np.float64))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        self.validate()

    def validate(self) -> None:
        for name, v in (("d_trans", self.d_trans), ("d_rot", self.d_rot)):
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
            n = float(np.linalg.norm(v))
            if n > _UNIT_TOL and abs(n - 1.0) > _UNIT_TOL:
                raise ValueError(f"{name} must be unit or zero, got |v| = {n!r}")
        if self.d_rot[2] != 0.0:
            raise ValueError("roll rate component of d_rot must be exactly 0")
        if not (self.alpha >= 0.0 and self.beta >= 0.0):
            raise ValueError("speeds must be nonnegative")

    @property
    def is_null(self) -> bool:
        return (
            float(np.linalg.norm(self.d_trans)) <= _UNIT_TOL
            and float(np.linalg.norm(self.d_rot)) <= _UNIT_TOL
        )

    def almost_equal(self, other: "Action", tol: float = 1e-9) -> bool:
        return (
            np.allclose(self.d_trans, other.d_trans, atol=tol)
            and np.allclose(self.d_rot, other.d_rot, atol=tol)
            and abs(self.alpha - other.alpha) <= tol
            and abs(self.beta - other.beta) <= tol
        )


NULL_ACTION = Action(np.zeros(3), np.zeros(3), 0.0, 0.0)


@dataclass(frozen=True)
class KeyState:
    """Instantaneous input device state."""

    pressed: frozenset = frozenset()
    mouse_delta: tuple = (0.0, 0.0)
    speed_scale: float = 1.0
    turn_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pressed", frozenset(self.pressed))
        unknown = self.pressed - KEY_VOCABULARY
        if unknown:
            raise ValueError(f"unknown keys: {sorted(unknown)}")
        dx, dy = self.mouse_delta
        if not (math.isfinite(dx) and math.isfinite(dy)):
            raise ValueError("mouse_delta must be finite")
        for name in ("speed_scale", "turn_scale"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class ControlConfig:
    """Limits and sensitivities of the input mapping."""

    v_max: float = 0.2          # world units / frame
    omega_max: float = math.pi / 16.0  # radians / frame
    mouse_saturation_px: float = 50.0


def keys_to_action(keys: KeyState, cfg: ControlConfig = ControlConfig()) -> Action:
    """Map a key/mouse state onto the continuous action space.

    Deterministic and total: every state maps to some action, opposing
    keys cancel, the empty state maps to the null action.
    """
    t = np.zeros(3)
    for k in keys.pressed:
        if k in _KEY_TRANS:
            t = t + _KEY_TRANS[k]
    tn = float(np.linalg.norm(t))
    if tn > _UNIT_TOL:
        d_trans = t / tn
        alpha = keys.speed_scale * cfg.v_max
    else:
        d_trans = np.zeros(3)
        alpha = 0.0

    r = np.zeros(3)
    any_arrow = False
    for k in keys.pressed:
        if k in _KEY_ROT:
            r = r + _KEY_ROT[k]
            any_arrow = True
    dx, dy = keys.mouse_delta
    m = math.hypot(dx, dy)
    if m > 0.0:
        # (pitch, yaw) from mouse: right drag turns right, down drag looks down
        r = r + np.array([-dy / m, -dx / m, 0.0]) * min(1.0, m / cfg.mouse_saturation_px)
    rn = float(np.linalg.norm(r))
    if rn > _UNIT_TOL:
        d_rot = r / rn
        if any_arrow:
            beta = keys.turn_scale * cfg.omega_max
        else:
            beta = keys.turn_scale * cfg.omega_max * min(1.0, m / cfg.mouse_saturation_px)
    else:
        d_rot = np.zeros(3)
        beta = 0.0

    return Action(d_trans, d_rot, alpha, beta)


def _slerp(u: np.ndarray, v: np.ndarray, s: float, plane_xy: bool) -> np.ndarray:
    """Spherical interpolation with the documented degenerate fallbacks.

    Zero endpoints and near-antipodal pairs fall back to linear
    interpolation + renormalisation; an exactly vanishing interpolant
    picks a deterministic orthogonal direction (restricted to the
    roll-free plane when ``plane_xy``).
    """
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu <= _UNIT_TOL and nv <= _UNIT_TOL:
        return np.zeros(3)
    if nu <= _UNIT_TOL or nv <= _UNIT_TOL:
        w = (1.0 - s) * u + s * v
        nw = float(np.linalg.norm(w))
        return w / nw if nw > _UNIT_TOL else np.zeros(3)

    dot = float(np.clip(np.dot(u, v), -1.0, 1.0))
    if dot > 0.999999:
        w = (1.0 - s) * u + s * v
        return w / float(np.linalg.norm(w))
    if dot < -0.999:
        w = (1.0 - s) * u + s * v
        nw = float(np.linalg.norm(w))
        if nw > 1e-8:
            return w / nw
        # antipodal midpoint: deterministic orthogonal pick
        if plane_xy:
            ortho = np.array([-u[1], u[0], 0.0])
        else:
            ortho = np.cross(u, [0.0, 1.0, 0.0])
            if np.linalg.norm(ortho) < 1e-6:
                ortho = np.cross(u, [1.0, 0.0, 0.0])
        return ortho / float(np.linalg.norm(ortho))
    theta = math.acos(dot)
    st = math.sin(theta)
    return (math.sin((1.0 - s) * theta) * u + math.sin(s * theta) * v) / st


def blend_actions(a: Action, b: Action, s: float) -> Action:
    """Interpolate two actions: slerp on directions, lerp on speeds."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    d_trans = _slerp(a.d_trans, b.d_trans, s, plane_xy=False)
    d_rot = _slerp(a.d_rot, b.d_rot, s, plane_xy=True)
    d_rot = np.array([d_rot[0], d_rot[1], 0.0])  # roll stays pinned
    n = float(np.linalg.norm(d_rot))
    if n > _UNIT_TOL:
        d_rot = d_rot / n
    return Action(
        d_trans,
        d_rot,
        (1.0 - s) * a.alpha + s * b.alpha,
        (1.0 - s) * a.beta + s * b.beta,
    )


def invert_action(a: Action) -> Action:
    """Reverse both directions, keep speeds (backward-motion twin)."""
    return replace(a, d_trans=-a.d_trans, d_rot=-a.d_rot)
