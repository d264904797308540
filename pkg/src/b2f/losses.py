"""Training objective: reconstruction, alignment, KL, consistency and cross-consistency."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import torch

from .core.rng import RngState
from .data.motion import EXPR_DIM, TrainingBatch
from .model import B2F, as_tensor

log = logging.getLogger(__name__)

TERMS = ("recon", "align", "kl", "consi", "cross")


@dataclass
class LossWeights:
    recon: float = 5.0
    align: float = 0.5
    consi: float = 0.5
    cross: float = 0.1
    jaw: float = 1000.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")


@dataclass
class KlSchedule:
    max_value: float = 0.3
    warmup: float = 0.25
    hold: float = 0.25
    decay: float = 0.5

    def __post_init__(self):
        if not math.isclose(self.warmup + self.hold + self.decay, 1.0, abs_tol=1e-12):
            raise ValueError("KL schedule fractions must sum to 1")


def kl_weight(epoch_fraction: float, schedule: KlSchedule | None = None) -> float:
    """Warm up linearly to the max, hold, then decay linearly back to 0."""
    s = schedule or KlSchedule()
    if not 0.0 <= epoch_fraction <= 1.0:
        log.warning("epoch fraction %r outside [0, 1]; clamping", epoch_fraction)
        epoch_fraction = min(max(epoch_fraction, 0.0), 1.0)
    if epoch_fraction <= s.warmup:
        return s.max_value * epoch_fraction / s.warmup if s.warmup > 0 else s.max_value
    if epoch_fraction <= s.warmup + s.hold:
        return s.max_value
    return s.max_value * (1.0 - epoch_fraction) / s.decay


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def recon_loss(F_target, O, jaw_weight: float = 1000.0) -> torch.Tensor:
    """Expression MSE plus ``jaw_weight`` times jaw MSE (means over frames and dims)."""
    F_target, O = as_tensor(F_target), as_tensor(O)
    _check_same_shape(F_target, O, "recon_loss")
    err = (O - F_target) ** 2
    return err[..., :EXPR_DIM].mean() + jaw_weight * err[..., EXPR_DIM:].mean()


def align_loss(body_emb: torch.Tensor, face_emb: torch.Tensor) -> torch.Tensor:
    _check_same_shape(body_emb, face_emb, "align_loss")
    return (1.0 - (body_emb * face_emb).sum(dim=-1)).mean()


def kl_loss(logits: torch.Tensor) -> torch.Tensor:
    """Mean over categorical rows of KL(softmax(row) || uniform), natural log."""
    logq = torch.log_softmax(logits, dim=-1)
    K = logits.shape[-1]
    return ((logq.exp() * logq).sum(dim=-1) + math.log(K)).mean()


def content_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean per-frame Euclidean distance."""
    _check_same_shape(a, b, "content_distance")
    return torch.linalg.vector_norm(a - b, dim=-1).mean()


def style_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_same_shape(a, b, "style_distance")
    return torch.linalg.vector_norm(a - b, dim=-1).mean()


def consistency_loss(
    model: B2F,
    F_content,
    S_style,
    O: torch.Tensor,
    rng: RngState,
    tau: float | None = None,
    content_target: torch.Tensor | None = None,
    style_target: torch.Tensor | None = None,
) -> torch.Tensor:
    """Re-encode ``O`` and compare with the encodings of the content and style inputs.

    With ``S_style`` from the same segment this is the consistency term; with a
    style reference from the other batch it is the cross-consistency term.
    Targets not supplied are computed here (style target first, then the
    re-encoded output, both drawing Gumbel noise from ``rng``). No stop-gradient
    is applied to either side.
    """
    if content_target is None:
        content_target = model.encode_content(F_content, "face")
    if style_target is None:
        style_target, _ = model.encode_style(S_style, "soft", tau, rng)
    content_out = model.encode_content(O, "face")
    style_out, _ = model.encode_style(O, "soft", tau, rng)
    return content_distance(content_target, content_out) + style_distance(style_target, style_out)


cross_consistency_loss = consistency_loss


def _value(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def term_weights(epoch_fraction: float, weights: LossWeights | None = None, schedule: KlSchedule | None = None) -> dict:
    w = weights or LossWeights()
    return {"recon": w.recon, "align": w.align, "kl": kl_weight(epoch_fraction, schedule), "consi": w.consi, "cross": w.cross}


def weighted_terms(terms: dict, epoch_fraction: float, weights: LossWeights | None = None, schedule: KlSchedule | None = None) -> dict:
    lam = term_weights(epoch_fraction, weights, schedule)
    return {k: lam[k] * terms[k] for k in TERMS}


def combine(terms: dict, epoch_fraction: float, weights: LossWeights | None = None, schedule: KlSchedule | None = None):
    """Weighted sum of the five raw terms; returns ``(total, breakdown)``."""
    lam = term_weights(epoch_fraction, weights, schedule)
    weighted = {k: lam[k] * terms[k] for k in TERMS}
    total = sum(weighted[k] for k in TERMS)
    breakdown = {k: {"raw": _value(terms[k]), "weight": lam[k], "weighted": _value(weighted[k])} for k in TERMS}
    return total, breakdown


def loss_terms(model: B2F, B, F, S, S_other, rng: RngState, weights: LossWeights | None = None, tau=None) -> dict:
    """Raw per-term values for content/style from one batch and crossed style ``S_other``."""
    w = weights or LossWeights()
    body_emb = model.encode_content(B, "body")
    face_emb = model.encode_content(F, "face")
    style, logits = model.encode_style(S, "soft", tau, rng)
    O = model.generate(body_emb, style)
    terms = {
        "recon": recon_loss(F, O, w.jaw),
        "align": align_loss(body_emb, face_emb),
        "kl": kl_loss(logits),
        "consi": consistency_loss(model, F, S, O, rng, tau, face_emb, style),
    }
    style_other, _ = model.encode_style(S_other, "soft", tau, rng)
    O_cross = model.generate(body_emb, style_other)
    terms["cross"] = consistency_loss(model, F, S_other, O_cross, rng, tau, face_emb, style_other)
    return terms


def total_loss(
    model: B2F,
    batch: TrainingBatch,
    other: TrainingBatch,
    epoch_fraction: float,
    rng: RngState,
    weights: LossWeights | None = None,
    schedule: KlSchedule | None = None,
):
    """Objective for ``batch`` with crossed styles taken item-wise from ``other``."""
    if other.n != batch.n:
        raise ValueError(f"crossed batches must have equal size ({batch.n} vs {other.n})")
    terms = loss_terms(model, batch.body, batch.face, batch.style, other.style, rng, weights)
    return combine(terms, epoch_fraction, weights, schedule)
