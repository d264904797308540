"""Motion containers, segmentation and dual-batch sampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.rng import RngState

KEY_JOINTS = (
    "pelvis",
    "left_ankle",
    "right_ankle",
    "left_foot",
    "right_foot",
    "head",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)
N_JOINTS = len(KEY_JOINTS)
POS_DIM, ROT_DIM, VEL_DIM = 3, 6, 3
# frame layout: all positions, then all 6D rotations, then all velocities
BODY_DIM = N_JOINTS * (POS_DIM + ROT_DIM + VEL_DIM)

EXPR_DIM = 50
JAW_DIM = 3
FACE_DIM = EXPR_DIM + JAW_DIM
EXPR_CLIP = 5.0

SEGMENT_LEN = 180
SEGMENT_STRIDE = 120
TRAIN_LEN_RANGE = (60, 90)
DEFAULT_FPS = 30.0


class MotionError(ValueError):
    pass


def body_slices(n_joints: int = N_JOINTS) -> dict[str, slice]:
    p, r = n_joints * POS_DIM, n_joints * ROT_DIM
    return {"position": slice(0, p), "rotation": slice(p, p + r), "velocity": slice(p + r, p + r + n_joints * VEL_DIM)}


@dataclass
class BodyMotionSequence:
    frames: np.ndarray  # [T, body_dim]
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise MotionError(f"body frames must be [T, dims], got shape {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dims(self) -> int:
        return self.frames.shape[1]


@dataclass
class FacialMotionSequence:
    """Per-frame FLAME vector: 50 expression coefficients then 3 jaw axis-angle values."""

    frames: np.ndarray  # [T, 53]
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != FACE_DIM:
            raise MotionError(f"facial frames must be [T, {FACE_DIM}], got shape {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def expression(self) -> np.ndarray:
        return self.frames[:, :EXPR_DIM]

    @property
    def jaw(self) -> np.ndarray:
        return self.frames[:, EXPR_DIM:]


@dataclass
class Clip:
    clip_id: str
    body: BodyMotionSequence
    face: FacialMotionSequence

    def __len__(self):
        return len(self.body)


@dataclass
class MotionSegment:
    body: np.ndarray  # [180, body_dim]
    face: np.ndarray  # [180, 53]
    clip_id: str
    start: int


@dataclass
class TrainingBatch:
    """``n`` frame-synchronized (body, face content, face style) triples of one length.

    ``provenance[i]`` is ``(segment index, clip id, segment start, cut start)``
    so the same-segment/same-start invariant can be audited.
    """

    body: np.ndarray  # [n, T, body_dim]
    face: np.ndarray  # [n, T, 53]
    style: np.ndarray  # [n, U, 53]
    batch_id: str
    provenance: list[tuple[int, str, int, int]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.body.shape[0]

    @property
    def T(self) -> int:
        return self.body.shape[1]

    @property
    def U(self) -> int:
        return self.style.shape[1]


def clip_expressions(face: FacialMotionSequence, limit: float = EXPR_CLIP) -> FacialMotionSequence:
    frames = face.frames.copy()
    np.clip(frames[:, :EXPR_DIM], -limit, limit, out=frames[:, :EXPR_DIM])
    return FacialMotionSequence(frames, face.fps)


def segment_starts(length: int, seg_len: int = SEGMENT_LEN, stride: int = SEGMENT_STRIDE) -> list[int]:
    return list(range(0, length - seg_len + 1, stride)) if length >= seg_len else []


def segment_clips(clips: list[Clip], seg_len: int = SEGMENT_LEN, stride: int = SEGMENT_STRIDE) -> list[MotionSegment]:
    """Cut each clip into overlapping fixed-length windows; short clips are dropped."""
    segments = []
    for clip in clips:
        if len(clip.body) != len(clip.face):
            raise MotionError(
                f"clip {clip.clip_id}: body has {len(clip.body)} frames but face has {len(clip.face)}"
            )
        for s in segment_starts(len(clip.body), seg_len, stride):
            segments.append(
                MotionSegment(clip.body.frames[s : s + seg_len], clip.face.frames[s : s + seg_len], clip.clip_id, s)
            )
    return segments


def sample_batch(
    segments: list[MotionSegment],
    n: int,
    rng: RngState,
    batch_id: str = "A",
    length_range: tuple[int, int] = TRAIN_LEN_RANGE,
    length: int | None = None,
    indices=None,
) -> TrainingBatch:
    """Cut B, F, S at one shared start from ``n`` segments.

    Segments are drawn with replacement unless ``indices`` names them.
    ``T`` is drawn uniformly from ``length_range`` (inclusive) unless fixed by
    ``length``; U = T.
    """
    if not segments:
        raise MotionError("cannot sample a batch from an empty segment pool")
    T = int(rng.integers(*length_range)) if length is None else int(length)
    if indices is None:
        idx = rng.choice(len(segments), n, replace=True)
    else:
        idx = np.asarray(indices, dtype=int)
        if len(idx) != n:
            raise MotionError(f"got {len(idx)} indices for a batch of {n}")
    bodies, faces, prov = [], [], []
    for i in idx:
        seg = segments[int(i)]
        seg_len = seg.body.shape[0]
        if T > seg_len:
            raise MotionError(f"requested length {T} exceeds segment length {seg_len}")
        s = int(rng.integers(0, seg_len - T))
        bodies.append(seg.body[s : s + T])
        faces.append(seg.face[s : s + T])
        prov.append((int(i), seg.clip_id, seg.start, s))
    face = np.stack(faces)
    return TrainingBatch(np.stack(bodies), face, face.copy(), batch_id, prov)
