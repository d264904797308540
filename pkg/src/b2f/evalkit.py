"""Evaluation metrics, style probe and content-alignment score."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from . import formats
from .model import B2F


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} differs from ground truth {g.shape}")
    if p.ndim != 2:
        raise ValueError(f"expected [T, dims] sequences, got shape {p.shape}")
    return p, g


def l2_error(pred, gt) -> float:
    """Mean over frames of the Euclidean norm of the per-frame difference."""
    p, g = _pair(pred, gt)
    return float(np.linalg.norm(p - g, axis=1).mean())


def std_dev_difference(pred, gt) -> float:
    """Mean over dims of |std_t(pred) - std_t(gt)|, population std."""
    p, g = _pair(pred, gt)
    if p.shape[0] < 2:
        raise ValueError("std_dev_difference needs at least 2 frames")
    return float(np.abs(p.std(axis=0) - g.std(axis=0)).mean())


@dataclass
class ClipScore:
    clip_id: str
    frames: int
    l2_error: float
    std_dev_difference: float


@dataclass
class EvalReport:
    clips: list = field(default_factory=list)
    probe_accuracy: float | None = None
    probe_chance: float | None = None
    alignment: float | None = None

    @property
    def clip_count(self) -> int:
        return len(self.clips)

    @property
    def frame_count(self) -> int:
        return sum(c.frames for c in self.clips)

    @property
    def l2_error(self) -> float:
        return float(np.mean([c.l2_error for c in self.clips])) if self.clips else float("nan")

    @property
    def std_dev_difference(self) -> float:
        return float(np.mean([c.std_dev_difference for c in self.clips])) if self.clips else float("nan")

    def to_document(self) -> dict:
        doc = {
            "format_version": formats.FORMAT_VERSION,
            "kind": "eval-report",
            "clip_count": self.clip_count,
            "frame_count": self.frame_count,
            "l2_error": self.l2_error,
            "std_dev_difference": self.std_dev_difference,
            "clips": [asdict(c) for c in self.clips],
        }
        for key in ("probe_accuracy", "probe_chance", "alignment"):
            if getattr(self, key) is not None:
                doc[key] = getattr(self, key)
        return doc

    def table(self) -> str:
        w = max([len("clip")] + [len(c.clip_id) for c in self.clips])
        lines = [f"{'clip':<{w}}  {'frames':>7}  {'l2':>10}  {'std-diff':>10}"]
        for c in self.clips:
            lines.append(f"{c.clip_id:<{w}}  {c.frames:>7d}  {c.l2_error:>10.6f}  {c.std_dev_difference:>10.6f}")
        lines.append(f"{'mean':<{w}}  {self.frame_count:>7d}  {self.l2_error:>10.6f}  {self.std_dev_difference:>10.6f}")
        lines.append(f"{self.clip_count} clips, {self.frame_count} frames")
        return "\n".join(lines)


def evaluate(pairs) -> EvalReport:
    """``pairs`` is an iterable of ``(clip_id, pred, gt)``; aggregates are unweighted means over clips."""
    report = EvalReport()
    for clip_id, pred, gt in pairs:
        p, g = _pair(pred, gt)
        report.clips.append(ClipScore(clip_id, p.shape[0], l2_error(p, g), std_dev_difference(p, g)))
    return report


# probes ---------------------------------------------------------------------------------------


class StyleProbe:
    """Multinomial logistic regression from single face frames to style id."""

    def __init__(self, seed: int = 0, max_iter: int = 2000):
        self.clf = LogisticRegression(max_iter=max_iter, random_state=seed)

    def fit(self, frames, labels) -> "StyleProbe":
        labels = np.asarray(labels)
        if len(np.unique(labels)) < 2:
            raise ValueError("style probe needs at least 2 styles")
        self.clf.fit(np.asarray(frames, dtype=np.float64), labels)
        return self

    def predict(self, frames) -> np.ndarray:
        return self.clf.predict(np.asarray(frames, dtype=np.float64))

    def accuracy(self, frames, labels) -> float:
        return float(np.mean(self.predict(frames) == np.asarray(labels)))


def style_probe(train_frames, train_labels, gen_frames, requested_labels, seed: int = 0) -> float:
    """Fit on ground-truth frames, score generated frames against the requested style."""
    return StyleProbe(seed).fit(train_frames, train_labels).accuracy(gen_frames, requested_labels)


def alignment_score(B, F, model: B2F) -> float:
    """Mean per-frame cosine between body and face content embeddings (both unit norm)."""
    with torch.no_grad():
        eb = model.encode_content(B, "body")
        ef = model.encode_content(F, "face")
    return float((eb * ef).sum(-1).mean())
