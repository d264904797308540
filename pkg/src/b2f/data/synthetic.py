"""Procedural corpus with known content factors and style labels.

Body and facial content are both driven by the same per-clip content signals
``c_k(t) = amp_k * sin(2 pi freq_k t / fps + phase_k)``, so a per-frame body to
face mapping exists. Style touches only the designated facial channels: a
per-style constant offset plus a per-style gain on the slowest content signal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.rng import RngState
from .kinematics import axis_angle_to_matrix, finite_difference_velocity, rot6d_from_matrix
from .motion import (
    DEFAULT_FPS,
    EXPR_DIM,
    FACE_DIM,
    N_JOINTS,
    SEGMENT_LEN,
    BodyMotionSequence,
    Clip,
    FacialMotionSequence,
)

N_CONTENT = 6
CONTENT_CHANNELS = np.arange(0, 30)
STYLE_CHANNELS = np.arange(30, EXPR_DIM)
JAW_CHANNELS = np.arange(EXPR_DIM, FACE_DIM)

# Rough standing skeleton in the character frame (x forward, y up, z = x cross y).
REST_POSE = np.array(
    [
        [0.00, 0.95, 0.00],  # pelvis
        [0.00, 0.10, -0.10],  # left_ankle
        [0.00, 0.10, 0.10],  # right_ankle
        [0.12, 0.03, -0.11],  # left_foot
        [0.12, 0.03, 0.11],  # right_foot
        [0.02, 1.62, 0.00],  # head
        [0.00, 1.15, -0.35],  # left_elbow
        [0.00, 1.15, 0.35],  # right_elbow
        [0.05, 0.90, -0.38],  # left_wrist
        [0.05, 0.90, 0.38],  # right_wrist
    ]
)


@dataclass
class SyntheticFactorRecord:
    clip_id: str
    frequency: np.ndarray  # [N_CONTENT] Hz
    phase: np.ndarray  # [N_CONTENT] rad
    amplitude: np.ndarray  # [N_CONTENT]
    style_id: int

    def to_dict(self) -> dict:
        return {
            "frequency": [float(v) for v in self.frequency],
            "phase": [float(v) for v in self.phase],
            "amplitude": [float(v) for v in self.amplitude],
            "style_id": int(self.style_id),
        }

    @classmethod
    def from_dict(cls, clip_id: str, d: dict) -> "SyntheticFactorRecord":
        return cls(clip_id, np.array(d["frequency"]), np.array(d["phase"]), np.array(d["amplitude"]), int(d["style_id"]))


class SyntheticWorld:
    """The fixed (seeded) maps from content factors and style ids to motion."""

    def __init__(self, seed: int, n_styles: int, fps: float = DEFAULT_FPS):
        if n_styles < 2:
            raise ValueError(f"need at least 2 styles, got {n_styles}")
        rng = RngState(seed)
        self.fps = fps
        self.n_styles = n_styles
        self.pos_mix = rng.normal((N_JOINTS, 3, N_CONTENT), 0.06)
        self.pos_mix[0, [0, 2], :] = 0.0  # pelvis stays over the character-frame origin
        self.rot_mix = rng.normal((N_JOINTS, 3, N_CONTENT), 0.15)
        self.face_mix = rng.normal((len(CONTENT_CHANNELS), N_CONTENT), 0.5)
        self.jaw_mix = rng.normal((len(JAW_CHANNELS), N_CONTENT), 0.5)
        n_style_ch = len(STYLE_CHANNELS)
        signs = np.where(rng.uniform((n_styles, n_style_ch)) < 0.5, -1.0, 1.0)
        self.style_offset = signs * rng.uniform((n_styles, n_style_ch), 0.5, 0.9)
        self.style_gain = rng.uniform((n_styles, n_style_ch), -0.2, 0.2)

    def sample_content(self, rng: RngState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        freq = rng.uniform(N_CONTENT, 0.3, 1.2)
        freq[0] = rng.uniform(1, 0.08, 0.2)[0]  # the low-frequency factor style modulates
        phase = rng.uniform(N_CONTENT, 0.0, 2 * np.pi)
        amp = rng.uniform(N_CONTENT, 0.5, 1.0)
        return freq, phase, amp

    def content_signals(self, freq, phase, amp, clip_len: int) -> np.ndarray:
        t = np.arange(clip_len)[:, None] / self.fps
        return amp * np.sin(2 * np.pi * freq * t + phase)  # [T, N_CONTENT]

    def render(self, freq, phase, amp, style_id: int, clip_len: int) -> tuple[BodyMotionSequence, FacialMotionSequence]:
        c = self.content_signals(freq, phase, amp, clip_len)
        T = clip_len

        pos = REST_POSE[None] + np.einsum("jdk,tk->tjd", self.pos_mix, c)
        rot = axis_angle_to_matrix(np.einsum("jdk,tk->tjd", self.rot_mix, c))
        vel = finite_difference_velocity(pos, self.fps)
        body = np.concatenate([pos.reshape(T, -1), rot6d_from_matrix(rot).reshape(T, -1), vel.reshape(T, -1)], axis=1)

        face = np.zeros((T, FACE_DIM))
        face[:, CONTENT_CHANNELS] = 0.8 * np.tanh(c @ self.face_mix.T)
        face[:, JAW_CHANNELS] = 0.05 * np.tanh(c @ self.jaw_mix.T)
        face[:, STYLE_CHANNELS] = self.style_offset[style_id] + self.style_gain[style_id] * c[:, :1]
        return BodyMotionSequence(body, self.fps), FacialMotionSequence(face, self.fps)


def generate_synthetic_corpus(
    seed: int = 0,
    n_clips: int = 64,
    n_styles: int = 4,
    clip_len: int = 360,
    fps: float = DEFAULT_FPS,
) -> tuple[list[Clip], list[SyntheticFactorRecord]]:
    """Clips get styles round-robin so every style is equally represented."""
    if n_styles < 2:
        raise ValueError(f"n_styles must be >= 2, got {n_styles}")
    if clip_len < SEGMENT_LEN:
        raise ValueError(f"clip_len must be >= {SEGMENT_LEN}, got {clip_len}")
    world = SyntheticWorld(seed, n_styles, fps)
    rng = RngState(seed).spawn()
    clips, records = [], []
    for i in range(n_clips):
        clip_id = f"clip_{i:04d}"
        freq, phase, amp = world.sample_content(rng)
        style = i % n_styles
        body, face = world.render(freq, phase, amp, style, clip_len)
        clips.append(Clip(clip_id, body, face))
        records.append(SyntheticFactorRecord(clip_id, freq, phase, amp, style))
    return clips, records
