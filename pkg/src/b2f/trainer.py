"""Dual-batch training loop with AdamW, KL scheduling, checkpoints and bitwise resume."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import formats
from .core.rng import RngState
from .data.motion import TRAIN_LEN_RANGE, MotionError, MotionSegment, TrainingBatch, sample_batch
from .losses import TERMS, KlSchedule, LossWeights, kl_weight, total_loss
from .model import B2F, B2FConfig, checkpoint_document, model_from_document

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 5e-5
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip_norm: float | None = 5.0
    epochs: int = 100
    seed: int = 0
    checkpoint_interval: int = 10
    steps_per_epoch: int | None = None
    length_range: tuple = TRAIN_LEN_RANGE
    normalize: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: KlSchedule = field(default_factory=KlSchedule)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.betas = tuple(self.betas)
        self.length_range = tuple(self.length_range)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.schedule, dict):
            self.schedule = KlSchedule(**self.schedule)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"], d["length_range"] = list(self.betas), list(self.length_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**d)


def make_optimizer(model: B2F, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay
    )


# optimizer state <-> document -----------------------------------------------------------


def optimizer_state_document(opt: torch.optim.Optimizer) -> dict:
    sd = opt.state_dict()
    state = {}
    for idx, slots in sd["state"].items():
        state[str(idx)] = {
            k: (float(v.item()) if v.ndim == 0 else formats.tensor_entry(v.detach().numpy())) for k, v in slots.items()
        }
    return {"state": state, "param_groups": sd["param_groups"]}


def load_optimizer_state(opt: torch.optim.Optimizer, doc: dict) -> None:
    state = {}
    for idx, slots in doc["state"].items():
        state[int(idx)] = {
            k: (torch.tensor(v, dtype=torch.float32) if not isinstance(v, dict) else torch.from_numpy(formats.entry_array(v)))
            for k, v in slots.items()
        }
    groups = copy.deepcopy(doc["param_groups"])
    for g in groups:
        g["betas"] = tuple(g["betas"])
    opt.load_state_dict({"state": state, "param_groups": groups})


# one step ----------------------------------------------------------------------------------


class NonFiniteLoss(RuntimeError):
    pass


def _update(model, opt, batch, other, fraction, rng, cfg):
    opt.zero_grad(set_to_none=True)
    total, breakdown = total_loss(model, batch, other, fraction, rng, cfg.weights, cfg.schedule)
    if not torch.isfinite(total):
        raise NonFiniteLoss(f"batch {batch.batch_id}: non-finite loss {total.item()}")
    total.backward()
    grads = [p.grad for p in model.parameters() if p.grad is not None]
    if cfg.clip_norm is not None:
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
    else:
        norm = torch.linalg.vector_norm(torch.stack([g.norm() for g in grads]))
    if not torch.isfinite(norm):
        raise NonFiniteLoss(f"batch {batch.batch_id}: non-finite gradient norm")
    opt.step()
    breakdown["total"] = float(total.detach())
    return breakdown


def train_step(
    batch_a: TrainingBatch,
    batch_b: TrainingBatch,
    model: B2F,
    opt: torch.optim.Optimizer,
    epoch_fraction: float,
    rng: RngState,
    cfg: TrainConfig | None = None,
):
    """Two consecutive updates sharing one optimizer state: A (styles from B), then B (styles from A).

    Returns ``(breakdown_a, breakdown_b)``, or ``None`` if either loss was
    non-finite; in that case parameters and optimizer moments are restored to
    their values before the step.
    """
    cfg = cfg or TrainConfig()
    saved_params = [p.detach().clone() for p in model.parameters()]
    saved_opt = copy.deepcopy(opt.state_dict())
    try:
        first = _update(model, opt, batch_a, batch_b, epoch_fraction, rng, cfg)
        second = _update(model, opt, batch_b, batch_a, epoch_fraction, rng, cfg)
    except NonFiniteLoss as e:
        log.warning("step aborted and rolled back: %s", e)
        with torch.no_grad():
            for p, s in zip(model.parameters(), saved_params):
                p.copy_(s)
        opt.load_state_dict(saved_opt)
        opt.zero_grad(set_to_none=True)
        return None
    return first, second


# epochs ----------------------------------------------------------------------------------------


def epoch_plan(n_segments: int, cfg: TrainConfig) -> tuple[int, int]:
    """``(batch size, steps)`` for one epoch over a pool of ``n_segments``.

    The batch shrinks to the pool when the pool is smaller than the configured
    size; by default one epoch visits every segment once as batch A.
    """
    n = min(cfg.batch_size, n_segments)
    if n < 2:
        raise MotionError("training needs at least 2 segments")
    steps = cfg.steps_per_epoch or math.ceil(n_segments / n)
    return n, steps


def _order_slice(perm: np.ndarray, step: int, n: int) -> np.ndarray:
    return np.take(perm, np.arange(step * n, step * n + n), mode="wrap")


@dataclass
class TrainResult:
    model: B2F
    optimizer: torch.optim.Optimizer
    rng: RngState
    epochs_done: int
    history: list = field(default_factory=list)
    aborted_steps: int = 0


def training_state(cfg: TrainConfig, opt, rng: RngState, epochs_done: int, aborted: int = 0) -> dict:
    return {
        "train_config": cfg.to_dict(),
        "epochs_done": epochs_done,
        "aborted_steps": aborted,
        "rng": rng.state_dict(),
        "optimizer": optimizer_state_document(opt),
    }


def save_training_checkpoint(path, model: B2F, opt, rng: RngState, cfg: TrainConfig, epochs_done: int, aborted=0):
    formats.write_document(path, checkpoint_document(model, training_state(cfg, opt, rng, epochs_done, aborted)))


def _log_line(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()


def train(
    config: TrainConfig,
    segments: list[MotionSegment],
    model_config: B2FConfig | None = None,
    out_dir=None,
    resume=None,
    log_path=None,
    stop_after: int | None = None,
) -> TrainResult:
    """Run ``config.epochs`` epochs of dual-batch training.

    Each epoch draws two independent permutations of the segment pool; step
    ``k`` cuts batch A from the first and batch B from the second. The KL
    weight for epoch ``e`` uses epoch fraction ``e / epochs``. A fresh model
    gets per-channel standardization statistics from the segment pool. Checkpoints
    land in ``out_dir`` every ``checkpoint_interval`` epochs and at the end
    (``final.json``) and hold the optimizer moments and RNG stream position,
    so ``resume`` from any of them replays the uninterrupted run bitwise.
    ``stop_after`` ends the run early after that many epochs in total.
    """
    if not segments:
        raise MotionError("training corpus is empty")
    if resume is not None:
        doc = formats.read_document(resume)
        model = model_from_document(doc, resume)
        state = doc.get("state") or {}
        if "train_config" not in state:
            raise formats.FormatError(f"{resume}: checkpoint has no training state to resume from")
        saved = TrainConfig.from_dict(state["train_config"])
        if saved.to_dict() != config.to_dict():
            log.warning("resuming with a training config that differs from the checkpoint's")
        opt = make_optimizer(model, config)
        load_optimizer_state(opt, state["optimizer"])
        rng = RngState.from_state_dict(state["rng"])
        start, aborted = int(state["epochs_done"]), int(state.get("aborted_steps", 0))
    else:
        model = B2F(model_config or B2FConfig())
        if config.normalize:
            model.set_normalization(
                np.concatenate([s.body for s in segments]), np.concatenate([s.face for s in segments])
            )
        opt = make_optimizer(model, config)
        rng = RngState(config.seed)
        start, aborted = 0, 0

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    end = config.epochs if stop_after is None else min(config.epochs, stop_after)
    n, steps = epoch_plan(len(segments), config)
    log.info("training %d segments, batch %d, %d steps/epoch, epochs %d..%d", len(segments), n, steps, start, end)
    history = []
    fh = open(log_path, "a") if log_path is not None else None
    try:
        for epoch in range(start, end):
            fraction = epoch / config.epochs
            lam3 = kl_weight(fraction, config.schedule)
            _log_line(fh, {"event": "epoch", "epoch": epoch, "fraction": fraction, "kl_weight": lam3})
            perm_a, perm_b = rng.permutation(len(segments)), rng.permutation(len(segments))
            sums = {k: 0.0 for k in TERMS}
            count = 0
            for step in range(steps):
                a = sample_batch(segments, n, rng, "A", config.length_range, indices=_order_slice(perm_a, step, n))
                b = sample_batch(segments, n, rng, "B", config.length_range, indices=_order_slice(perm_b, step, n))
                result = train_step(a, b, model, opt, fraction, rng, config)
                if result is None:
                    aborted += 1
                    _log_line(fh, {"event": "abort", "epoch": epoch, "step": step})
                    continue
                for which, br in zip("AB", result):
                    _log_line(fh, {"event": "update", "epoch": epoch, "step": step, "batch": which,
                                   "total": br["total"], "terms": {k: br[k] for k in TERMS}})
                    for k in TERMS:
                        sums[k] += br[k]["raw"]
                    count += 1
            summary = {k: (v / count if count else math.nan) for k, v in sums.items()}
            history.append({"epoch": epoch, "kl_weight": lam3, **summary})
            done = epoch + 1
            if out is not None and config.checkpoint_interval and done % config.checkpoint_interval == 0:
                save_training_checkpoint(out / f"epoch_{done:04d}.json", model, opt, rng, config, done, aborted)
        if out is not None:
            save_training_checkpoint(out / "final.json", model, opt, rng, config, end, aborted)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(model, opt, rng, end, history, aborted)
