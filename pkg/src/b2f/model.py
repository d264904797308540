"""Style encoder, body/face content encoders and the facial motion generator."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from . import formats
from .core import ops
from .core.layers import Conv1dK3, DecoderLayer, EncoderLayer, FFTBlock, LayerNorm, Linear
from .core.rng import RngState
from .data.motion import BODY_DIM, FACE_DIM

INFERENCE_TAU = 1e-6


@dataclass
class B2FConfig:
    body_dim: int = BODY_DIM
    face_dim: int = FACE_DIM
    content_dim: int = 512
    content_heads: int = 4
    content_layers: int = 8
    content_ff: int = 1024
    style_D: int = 12
    style_K: int = 16
    style_heads: int = 4
    style_ff: int = 192
    tau: float = 0.7
    style_proj_dim: int = 64
    decoder_layers: int = 4
    decoder_heads: int = 4
    decoder_ff: int = 1024
    seed: int = 0

    @property
    def style_dim(self) -> int:
        return self.style_D * self.style_K

    @property
    def decoder_dim(self) -> int:
        return self.content_dim + self.style_proj_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "B2FConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def reduced(cls, **overrides) -> "B2FConfig":
        """Desk-scale widths used by tests and the acceptance runs."""
        base = dict(
            content_dim=32, content_layers=2, content_ff=64, style_ff=64,
            style_proj_dim=16, decoder_layers=2, decoder_ff=64,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def micro(cls, **overrides) -> "B2FConfig":
        """Tiny widths for finite-difference checks of the whole objective."""
        base = dict(
            body_dim=12, content_dim=8, content_heads=2, content_layers=1, content_ff=8,
            style_D=2, style_K=3, style_heads=2, style_ff=6, style_proj_dim=4,
            decoder_layers=1, decoder_heads=2, decoder_ff=8,
        )
        base.update(overrides)
        return cls(**base)


def channel_stats(frames, floor: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std over all leading axes.

    Channels with std below ``floor`` (constant in the data) get std 1 so
    standardizing them is a pure shift.
    """
    x = np.asarray(frames, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    mean, std = x.mean(axis=0), x.std(axis=0)
    return mean, np.where(std > floor, std, 1.0)


class Standardize(nn.Module):
    """Fixed per-channel affine map kept as buffers (identity until set)."""

    def __init__(self, width: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(width, dtype=ops.DTYPE))
        self.register_buffer("std", torch.ones(width, dtype=ops.DTYPE))

    def set(self, mean, std) -> None:
        mean, std = as_tensor(mean), as_tensor(std)
        if mean.shape != self.mean.shape or std.shape != self.std.shape:
            raise ops.ShapeError(f"normalization stats must have width {self.mean.shape[0]}")
        if not bool((std > 0).all()):
            raise ValueError("normalization std must be positive")
        self.mean.copy_(mean)
        self.std.copy_(std)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def inverse(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.std + self.mean


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == ops.DTYPE else x.to(ops.DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


class StyleEncoder(nn.Module):
    """Maps a facial style reference ``[..., U, 53]`` to D categorical logit rows."""

    def __init__(self, cfg: B2FConfig, rng: RngState):
        super().__init__()
        H = cfg.style_dim
        self.D, self.K = cfg.style_D, cfg.style_K
        self.conv1 = Conv1dK3(cfg.face_dim, H, rng)
        self.norm1 = LayerNorm(H)
        self.conv2 = Conv1dK3(H, H, rng)
        self.norm2 = LayerNorm(H)
        self.block = FFTBlock(H, cfg.style_heads, cfg.style_ff, rng)
        self.standardize = Standardize(cfg.face_dim)

    def logits(self, S: torch.Tensor) -> torch.Tensor:
        if S.shape[-2] < 1:
            raise ops.ShapeError("style reference is empty")
        h = self.norm1(torch.relu(self.conv1(self.standardize(S))))
        h = self.norm2(torch.relu(self.conv2(h)))
        h = h + ops.sinusoidal_pe(h.shape[-2], h.shape[-1])
        h = self.block(h).mean(dim=-2)
        return h.reshape(*h.shape[:-1], self.D, self.K)


class ContentEncoder(nn.Module):
    """Per-frame unit-norm content embeddings ``[..., T, content_dim]``."""

    def __init__(self, d_in: int, cfg: B2FConfig, rng: RngState):
        super().__init__()
        self.d_in = d_in
        self.proj = Linear(d_in, cfg.content_dim, rng)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.content_dim, cfg.content_heads, cfg.content_ff, rng) for _ in range(cfg.content_layers)
        )
        self.out = Linear(cfg.content_dim, cfg.content_dim, rng)
        self.standardize = Standardize(d_in)

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        if X.shape[-1] != self.d_in:
            raise ops.ShapeError(f"content encoder expects {self.d_in} values per frame, got {X.shape[-1]}")
        if X.shape[-2] < 1:
            raise ops.ShapeError("content input is empty")
        h = self.proj(self.standardize(X))
        h = h + ops.sinusoidal_pe(h.shape[-2], h.shape[-1])
        for layer in self.layers:
            h = layer(h)
        return ops.l2_normalize(self.out(h))


class Generator(nn.Module):
    def __init__(self, cfg: B2FConfig, rng: RngState):
        super().__init__()
        self.style_proj = Linear(cfg.style_dim, cfg.style_proj_dim, rng)
        self.layers = nn.ModuleList(
            DecoderLayer(cfg.decoder_dim, cfg.decoder_heads, cfg.decoder_ff, cfg.content_dim, rng)
            for _ in range(cfg.decoder_layers)
        )
        self.head = Linear(cfg.decoder_dim, cfg.face_dim, rng)
        self.standardize = Standardize(cfg.face_dim)

    def forward(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """``style`` is ``[..., style_dim]`` (broadcast over time) or per-frame ``[..., T, style_dim]``."""
        s = self.style_proj(style)
        if s.dim() == content.dim() - 1:
            s = s.unsqueeze(-2)
        s = s.expand(*content.shape[:-1], s.shape[-1])
        h = torch.cat([content, s], dim=-1)
        for layer in self.layers:
            h = layer(h, content)
        return self.standardize.inverse(self.head(h))


class B2F(nn.Module):
    def __init__(self, cfg: B2FConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or B2FConfig()
        rng = RngState(cfg.seed)
        self.style_encoder = StyleEncoder(cfg, rng)
        self.body_encoder = ContentEncoder(cfg.body_dim, cfg, rng)
        self.face_encoder = ContentEncoder(cfg.face_dim, cfg, rng)
        self.generator = Generator(cfg, rng)

    def set_normalization(self, body_frames, face_frames) -> None:
        """Standardize inputs and de-standardize outputs with these data statistics."""
        body, face = channel_stats(body_frames), channel_stats(face_frames)
        self.body_encoder.standardize.set(*body)
        for module in (self.face_encoder, self.style_encoder, self.generator):
            module.standardize.set(*face)

    def encode_style(
        self,
        S,
        mode: str = "soft",
        tau: float | None = None,
        rng: RngState | None = None,
        noise: torch.Tensor | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(embedding [..., D*K], logits [..., D, K])``."""
        if mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")
        S = as_tensor(S)
        logits = self.style_encoder.logits(S)
        tau = self.cfg.tau if tau is None else tau
        sample = ops.gumbel_softmax(logits, tau, rng, hard=(mode == "hard"), noise=noise)
        return sample.reshape(*sample.shape[:-2], self.cfg.style_dim), logits

    def encode_content(self, X, which: str) -> torch.Tensor:
        if which == "body":
            return self.body_encoder(as_tensor(X))
        if which == "face":
            return self.face_encoder(as_tensor(X))
        raise ValueError(f"which must be 'body' or 'face', got {which!r}")

    def generate(self, content: torch.Tensor, style) -> torch.Tensor:
        return self.generator(content, as_tensor(style))

    def forward(self, B, S, mode: str = "soft", tau: float | None = None, rng: RngState | None = None):
        """Full pipeline: returns ``(O [..., T, 53], logits, style embedding)``."""
        style, logits = self.encode_style(S, mode, tau, rng)
        return self.generate(self.encode_content(B, "body"), style), logits, style


# checkpoints ---------------------------------------------------------------------------


def checkpoint_document(model: B2F, state: dict | None = None) -> dict:
    doc = {
        "format_version": formats.FORMAT_VERSION,
        "kind": "b2f-checkpoint",
        "config": model.cfg.to_dict(),
        "params": {name: formats.tensor_entry(p.detach().numpy()) for name, p in model.state_dict().items()},
    }
    if state is not None:
        doc["state"] = state
    return doc


def save_checkpoint(path, model: B2F, state: dict | None = None) -> None:
    formats.write_document(path, checkpoint_document(model, state))


def model_from_document(doc: dict, source="checkpoint") -> B2F:
    if doc.get("format_version") != formats.FORMAT_VERSION or doc.get("kind") != "b2f-checkpoint":
        raise formats.FormatError(f"{source}: not a version-{formats.FORMAT_VERSION} b2f checkpoint")
    model = B2F(B2FConfig.from_dict(doc["config"]))
    own = model.state_dict()
    params = doc["params"]
    if set(params) != set(own):
        missing, extra = sorted(set(own) - set(params)), sorted(set(params) - set(own))
        raise formats.FormatError(f"{source}: parameter names differ from config (missing {missing[:5]}, extra {extra[:5]})")
    loaded = {}
    for name, entry in params.items():
        arr = formats.entry_array(entry)
        if tuple(arr.shape) != tuple(own[name].shape):
            raise formats.FormatError(
                f"{source}: {name} has shape {tuple(arr.shape)}, config implies {tuple(own[name].shape)}"
            )
        loaded[name] = torch.from_numpy(arr)
    model.load_state_dict(loaded)
    return model


def load_checkpoint(path) -> tuple[B2F, dict | None]:
    doc = formats.read_document(path)
    return model_from_document(doc, path), doc.get("state")
