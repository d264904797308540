"""Offline and streaming generation, style blending, code perturbation and style schedules."""
from __future__ import annotations

import collections
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
import torch

from . import formats
from .core.rng import RngState
from .data.motion import DEFAULT_FPS, BodyMotionSequence, FacialMotionSequence, MotionError
from .model import B2F, INFERENCE_TAU

WINDOW = 50


def _frames(x) -> np.ndarray:
    if isinstance(x, (BodyMotionSequence, FacialMotionSequence)):
        return x.frames
    return np.asarray(x, dtype=np.float64)


def style_code(model: B2F, S_ref, mode: str = "hard", seed: int | None = None, tau: float = INFERENCE_TAU) -> np.ndarray:
    """Style embedding ``[D*K]`` of a reference clip.

    Without a seed no Gumbel noise is added: ``hard`` picks each block's
    highest logit and ``soft`` is ``softmax(logits / tau)``. With a seed the
    noise comes from ``RngState(seed)``, i.e. a sample from the categorical
    posterior.
    """
    S = _frames(S_ref)
    if S.ndim != 2 or S.shape[0] < 1:
        raise MotionError("style reference must be a non-empty [U, 53] clip")
    cfg = model.cfg
    noise = torch.zeros(cfg.style_D, cfg.style_K, dtype=torch.float64) if seed is None else None
    with torch.no_grad():
        emb, _ = model.encode_style(S, mode, tau, RngState(seed) if seed is not None else None, noise)
    return emb.numpy()


def generate_from_style(model: B2F, B, style) -> np.ndarray:
    """Face frames ``[T, 53]`` for body frames ``[T, body_dim]`` and a style ``[D*K]`` or ``[T, D*K]``."""
    B = _frames(B)
    if B.ndim != 2 or B.shape[0] < 1:
        raise MotionError("body input must be a non-empty [T, dims] clip")
    with torch.no_grad():
        content = model.encode_content(B, "body")
        return model.generate(content, style).numpy()


def generate_offline(
    model: B2F, B, S_ref, mode: str = "hard", seed: int | None = None, tau: float = INFERENCE_TAU
) -> FacialMotionSequence:
    """One forward pass over the whole body sequence, any length."""
    fps = B.fps if isinstance(B, BodyMotionSequence) else DEFAULT_FPS
    return FacialMotionSequence(generate_from_style(model, B, style_code(model, S_ref, mode, seed, tau)), fps)


# streaming ---------------------------------------------------------------------------------------


def pad_window(history, window: int = WINDOW) -> np.ndarray:
    """Last ``window`` frames; shorter histories are front-padded with their first frame."""
    h = _frames(history)
    if h.ndim != 2 or h.shape[0] < 1:
        raise MotionError("streaming needs at least one body frame")
    if h.shape[0] >= window:
        return h[-window:]
    return np.concatenate([np.repeat(h[:1], window - h.shape[0], axis=0), h])


def realtime_step(model: B2F, history, style, window: int = WINDOW) -> np.ndarray:
    """Run the model on the padded window and return its last output frame."""
    return generate_from_style(model, pad_window(history, window), style)[-1]


class StreamingGenerator:
    """Per-stream window buffer; feed one body frame, get one face frame."""

    def __init__(self, model: B2F, style, window: int = WINDOW):
        self.model, self.window = model, window
        self.style = np.asarray(style, dtype=np.float64)
        self._buf: collections.deque = collections.deque(maxlen=window)

    def push(self, body_frame) -> np.ndarray:
        frame = np.asarray(body_frame, dtype=np.float64)
        if frame.ndim != 1:
            raise MotionError(f"push takes one body frame, got shape {frame.shape}")
        self._buf.append(frame)
        return realtime_step(self.model, np.stack(self._buf), self.style, self.window)

    def reset(self) -> None:
        self._buf.clear()


# style operations ------------------------------------------------------------------------------


def interpolate_styles(e1, e2, alpha: float) -> np.ndarray:
    """``(1 - alpha) e1 + alpha e2``; convex, so every block stays on its simplex."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    e1, e2 = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"style shapes differ: {e1.shape} vs {e2.shape}")
    if alpha == 0.0:
        return e1.copy()
    if alpha == 1.0:
        return e2.copy()
    return (1.0 - alpha) * e1 + alpha * e2


def is_hard(e, D: int, K: int) -> bool:
    blocks = np.asarray(e, dtype=np.float64).reshape(D, K)
    return bool(np.all((blocks == 0.0) | (blocks == 1.0)) and np.all(blocks.sum(axis=1) == 1.0))


def perturb_code(e, n: int, rng: RngState, D: int = 12, K: int = 16) -> np.ndarray:
    """Move the active index of ``n`` distinct blocks, chosen uniformly, to another uniform index."""
    if not is_hard(e, D, K):
        raise ValueError("perturb_code needs a hard (one-hot per block) style code")
    if not 0 <= n <= D:
        raise ValueError(f"n must be in [0, {D}], got {n}")
    blocks = np.asarray(e, dtype=np.float64).reshape(D, K).copy()
    for d in rng.choice(D, n, replace=False):
        old = int(blocks[d].argmax())
        new = int(rng.integers(0, K - 2))
        new += new >= old  # skip the current index
        blocks[d, old], blocks[d, new] = 0.0, 1.0
    return blocks.reshape(-1)


def changed_blocks(e1, e2, D: int = 12, K: int = 16) -> int:
    """Number of blocks whose argmax differs."""
    a = np.asarray(e1, dtype=np.float64).reshape(D, K).argmax(axis=1)
    b = np.asarray(e2, dtype=np.float64).reshape(D, K).argmax(axis=1)
    return int((a != b).sum())


# schedules -------------------------------------------------------------------------------------


@dataclass
class Blend:
    """Blend of two embeddings whose ratio runs over the span until the next keyframe.

    ``alpha`` is a constant, a ``(start, end)`` pair interpolated linearly over
    the span, or a callable of the span-local position in [0, 1].
    """

    e1: np.ndarray
    e2: np.ndarray
    alpha: Union[float, tuple, Callable[[float], float]] = 0.5

    def at(self, u: float) -> np.ndarray:
        if callable(self.alpha):
            a = float(self.alpha(u))
        elif isinstance(self.alpha, (tuple, list)):
            a0, a1 = self.alpha
            a = a1 if u == 1.0 else min(max(a0 + (a1 - a0) * u, 0.0), 1.0)
        else:
            a = float(self.alpha)
        return interpolate_styles(self.e1, self.e2, a)


class StyleSchedule:
    """Keyframed style over time: ``[(frame, embedding or Blend), ...]`` with frame 0 first."""

    def __init__(self, keys: Sequence[tuple]):
        keys = [(int(f), v) for f, v in keys]
        if not keys:
            raise ValueError("style schedule is empty")
        frames = [f for f, _ in keys]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"schedule frame indices must be strictly increasing, got {frames}")
        if frames[0] != 0:
            raise ValueError(f"schedule must cover frame 0 (first key at {frames[0]})")
        for _, v in keys:
            if isinstance(v, Blend) and not callable(v.alpha):
                ends = v.alpha if isinstance(v.alpha, (tuple, list)) else (v.alpha,)
                if not all(0.0 <= a <= 1.0 for a in ends):
                    raise ValueError(f"blend alpha must be in [0, 1], got {v.alpha}")
        self.keys = keys

    def per_frame(self, T: int) -> np.ndarray:
        out = []
        for i, (start, value) in enumerate(self.keys):
            if start >= T:
                break
            end = self.keys[i + 1][0] if i + 1 < len(self.keys) else T
            end = min(end, T)
            span = max(end - start - 1, 1)
            for t in range(start, end):
                if isinstance(value, Blend):
                    out.append(value.at((t - start) / span))
                else:
                    out.append(np.asarray(value, dtype=np.float64))
        return np.stack(out)

    # documents
    def to_document(self) -> dict:
        entries = []
        for frame, v in self.keys:
            if isinstance(v, Blend):
                if callable(v.alpha):
                    raise formats.FormatError("a blend with a callable alpha cannot be written")
                alpha = list(v.alpha) if isinstance(v.alpha, (tuple, list)) else v.alpha
                entries.append({"frame": frame, "blend": {"a": _floats(v.e1), "b": _floats(v.e2), "alpha": alpha}})
            else:
                entries.append({"frame": frame, "style": _floats(v)})
        return {"format_version": formats.FORMAT_VERSION, "kind": "style-schedule", "keys": entries}

    @classmethod
    def from_document(cls, doc: dict, source="schedule") -> "StyleSchedule":
        if doc.get("format_version") != formats.FORMAT_VERSION or doc.get("kind") != "style-schedule":
            raise formats.FormatError(f"{source}: not a version-{formats.FORMAT_VERSION} style schedule")
        keys = []
        for e in doc["keys"]:
            if "blend" in e:
                b = e["blend"]
                alpha = tuple(b["alpha"]) if isinstance(b["alpha"], list) else b["alpha"]
                keys.append((e["frame"], Blend(np.asarray(b["a"], float), np.asarray(b["b"], float), alpha)))
            else:
                keys.append((e["frame"], np.asarray(e["style"], float)))
        return cls(keys)


def _floats(x) -> list:
    return np.asarray(x, dtype=np.float64).tolist()


def generate_with_schedule(model: B2F, B, schedule: StyleSchedule) -> FacialMotionSequence:
    """Generation with a per-frame style embedding taken from ``schedule``."""
    fps = B.fps if isinstance(B, BodyMotionSequence) else DEFAULT_FPS
    frames = _frames(B)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise MotionError("body input must be a non-empty [T, dims] clip")
    return FacialMotionSequence(generate_from_style(model, frames, schedule.per_frame(frames.shape[0])), fps)
