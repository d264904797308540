"""Global skeleton data to per-frame character-frame body content."""
from __future__ import annotations

import logging

import numpy as np

from .motion import DEFAULT_FPS, BodyMotionSequence

log = logging.getLogger(__name__)

UP = np.array([0.0, 1.0, 0.0])


def rot6d_from_matrix(R: np.ndarray) -> np.ndarray:
    """First two columns of ``[..., 3, 3]`` rotations, column by column."""
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def matrix_from_rot6d(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two stored columns back into an orthonormal frame."""
    a, b = r6[..., :3], r6[..., 3:]
    x = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b - (x * b).sum(-1, keepdims=True) * x
    y = b / np.linalg.norm(b, axis=-1, keepdims=True)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def axis_angle_to_matrix(aa: np.ndarray) -> np.ndarray:
    """Rodrigues formula over ``[..., 3]``."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    safe = np.where(theta < 1e-12, 1.0, theta)
    k = aa / safe
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([zero, -kz, ky, kz, zero, -kx, -ky, kx, zero], axis=-1).reshape(*aa.shape[:-1], 3, 3)
    s, c = np.sin(theta)[..., None], np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + (1 - c) * (K @ K)


def finite_difference_velocity(x: np.ndarray, fps: float) -> np.ndarray:
    """Central differences inside, one-sided at both ends; time is axis 0."""
    v = np.zeros_like(x)
    if x.shape[0] < 2:
        return v
    v[1:-1] = (x[2:] - x[:-2]) * (fps / 2.0)
    v[0] = (x[1] - x[0]) * fps
    v[-1] = (x[-1] - x[-2]) * fps
    return v


def character_bases(forward: np.ndarray, min_norm: float = 1e-6) -> np.ndarray:
    """Per-frame basis matrices with columns (ground forward, up, forward x up).

    A forward vector with no usable ground component reuses the previous
    frame's basis; leading degenerate frames take the first valid one.
    """
    T = forward.shape[0]
    bases = np.zeros((T, 3, 3))
    valid = np.zeros(T, dtype=bool)
    for t in range(T):
        f = forward[t] - forward[t].dot(UP) * UP
        n = np.linalg.norm(f)
        if n > min_norm:
            f = f / n
            bases[t] = np.stack([f, UP, np.cross(f, UP)], axis=-1)
            valid[t] = True
        elif t > 0 and valid[t - 1]:
            bases[t] = bases[t - 1]
            valid[t] = True
    if not valid.any():
        log.warning("no frame has a usable forward direction; using the global x axis")
        f = np.array([1.0, 0.0, 0.0])
        bases[:] = np.stack([f, UP, np.cross(f, UP)], axis=-1)
        return bases
    first = int(np.argmax(valid))
    bases[:first] = bases[first]
    return bases


def to_character_frame(
    positions: np.ndarray,
    rotations: np.ndarray,
    fps: float = DEFAULT_FPS,
    forward: np.ndarray | None = None,
) -> BodyMotionSequence:
    """Re-express key-joint data in the per-frame character frame.

    positions: ``[T, J, 3]`` global joint positions (y up, joint 0 = pelvis).
    rotations: ``[T, J, 3, 3]`` global joint orientations.
    forward: ``[T, 3]`` root forward direction; defaults to the pelvis local
    z axis.
    """
    positions = np.asarray(positions, dtype=np.float64)
    rotations = np.asarray(rotations, dtype=np.float64)
    T, J = positions.shape[:2]
    if forward is None:
        forward = rotations[:, 0, :, 2]
    R = character_bases(np.asarray(forward, dtype=np.float64))
    Rt = np.swapaxes(R, -1, -2)

    origin = positions[:, 0, :] * np.array([1.0, 0.0, 1.0])
    local_pos = np.einsum("tij,tkj->tki", Rt, positions - origin[:, None, :])
    local_rot = rot6d_from_matrix(Rt[:, None] @ rotations)
    vel = finite_difference_velocity(positions, fps)
    local_vel = np.einsum("tij,tkj->tki", Rt, vel)

    frames = np.concatenate(
        [local_pos.reshape(T, J * 3), local_rot.reshape(T, J * 6), local_vel.reshape(T, J * 3)], axis=1
    )
    return BodyMotionSequence(frames, fps)
