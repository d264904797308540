"""FLAME (103) to ARKit (51) conversion with a parameter-blended mixture of experts."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import formats
from .core import ops
from .core.layers import Linear, _param, _xavier
from .core.rng import RngState
from .data.motion import EXPR_DIM, FACE_DIM, JAW_DIM

log = logging.getLogger(__name__)

FLAME_DIM = 103
FLAME_EXPR = 100
N_EXPERTS = 8
MOUTH_CLOSE_WEIGHT = 500.0

# Apple's 52 ARKit blendshapes in their documented order, without tongueOut.
ARKIT_NAMES = (
    "eyeBlinkLeft", "eyeLookDownLeft", "eyeLookInLeft", "eyeLookOutLeft", "eyeLookUpLeft", "eyeSquintLeft",
    "eyeWideLeft", "eyeBlinkRight", "eyeLookDownRight", "eyeLookInRight", "eyeLookOutRight", "eyeLookUpRight",
    "eyeSquintRight", "eyeWideRight", "jawForward", "jawLeft", "jawRight", "jawOpen", "mouthClose",
    "mouthFunnel", "mouthPucker", "mouthLeft", "mouthRight", "mouthSmileLeft", "mouthSmileRight",
    "mouthFrownLeft", "mouthFrownRight", "mouthDimpleLeft", "mouthDimpleRight", "mouthStretchLeft",
    "mouthStretchRight", "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthPressLeft", "mouthPressRight", "mouthLowerDownLeft", "mouthLowerDownRight", "mouthUpperUpLeft",
    "mouthUpperUpRight", "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight", "noseSneerLeft", "noseSneerRight",
)
ARKIT_DIM = len(ARKIT_NAMES)


def arkit_index(name: str) -> int:
    """Index of a blendshape by name, case-insensitive (``MouthClose`` works)."""
    lowered = [n.lower() for n in ARKIT_NAMES]
    try:
        return lowered.index(name.lower())
    except ValueError:
        raise KeyError(f"unknown ARKit blendshape {name!r}") from None


MOUTH_CLOSE = arkit_index("MouthClose")


def assemble_flame103(b2f_out, base=None) -> np.ndarray:
    """Put B2F's 50 expression values into dims 0..49 and its jaw into 100..102 of ``base``.

    Works per frame on ``[..., 53]``; ``base`` defaults to zeros and dims
    50..99 always come from it.
    """
    out = np.asarray(b2f_out, dtype=np.float64)
    if out.shape[-1] != FACE_DIM:
        raise ValueError(f"B2F output must have {FACE_DIM} values per frame, got {out.shape[-1]}")
    if base is None:
        result = np.zeros(out.shape[:-1] + (FLAME_DIM,))
    else:
        result = np.broadcast_to(np.asarray(base, dtype=np.float64), out.shape[:-1] + (FLAME_DIM,)).copy()
    result[..., :EXPR_DIM] = out[..., :EXPR_DIM]
    result[..., FLAME_EXPR:] = out[..., EXPR_DIM:]
    return result


def mlp_shapes(dims) -> list[tuple]:
    shapes = []
    for a, b in zip(dims, dims[1:]):
        shapes += [(a, b), (b,)]
    return shapes


EXPERT_DIMS = (FLAME_DIM, 128, 128, ARKIT_DIM)


def blend_experts(gate: torch.Tensor, experts: list[torch.Tensor]) -> list[torch.Tensor]:
    """Per-sample blended parameters ``sum_i gate[..., i] * expert_i``.

    ``gate`` is ``[..., E]`` on the simplex; each expert tensor is ``[E, *shape]``.
    Returns tensors of shape ``[..., *shape]``.
    """
    gate = torch.as_tensor(gate, dtype=ops.DTYPE)
    if gate.shape[-1] != experts[0].shape[0]:
        raise ValueError(f"gate has {gate.shape[-1]} weights for {experts[0].shape[0]} experts")
    if bool((gate < 0).any()) or not torch.allclose(gate.sum(-1), torch.ones((), dtype=ops.DTYPE), atol=1e-9, rtol=0):
        raise ValueError("gate weights must be nonnegative and sum to 1")
    out = []
    for p in experts:
        flat = p.reshape(p.shape[0], -1)
        out.append((gate @ flat).reshape(*gate.shape[:-1], *p.shape[1:]))
    return out


class Converter(nn.Module):
    """Input encoder 103-64-32, gating 32-128-128-8, eight experts 103-128-128-51.

    Encoder and gating hidden layers use ReLU; the blended generator uses ELU
    and a linear output.
    """

    def __init__(self, seed: int = 0, n_experts: int = N_EXPERTS):
        super().__init__()
        rng = RngState(seed)
        self.seed, self.n_experts = seed, n_experts
        self.enc1, self.enc2 = Linear(FLAME_DIM, 64, rng), Linear(64, 32, rng)
        self.gate1, self.gate2, self.gate3 = Linear(32, 128, rng), Linear(128, 128, rng), Linear(128, n_experts, rng)
        params = []
        for shape in mlp_shapes(EXPERT_DIMS):
            if len(shape) == 2:
                params.append(_param(np.stack([_xavier(rng, shape, *shape).detach().numpy() for _ in range(n_experts)])))
            else:
                params.append(_param(torch.zeros(n_experts, *shape)))
        self.experts = nn.ParameterList(params)

    def gate(self, f: torch.Tensor) -> torch.Tensor:
        z = self.enc2(torch.relu(self.enc1(f)))
        h = torch.relu(self.gate2(torch.relu(self.gate1(z))))
        return torch.softmax(self.gate3(h), dim=-1)

    def generator(self, f: torch.Tensor, params: list[torch.Tensor]) -> torch.Tensor:
        h = f
        n_layers = len(params) // 2
        for i in range(n_layers):
            W, b = params[2 * i], params[2 * i + 1]
            h = (h.unsqueeze(-2) @ W).squeeze(-2) + b
            if i < n_layers - 1:
                h = torch.nn.functional.elu(h)
        return h

    def forward(self, f) -> torch.Tensor:
        f = torch.as_tensor(np.asarray(f, dtype=np.float64)) if not isinstance(f, torch.Tensor) else f
        if f.shape[-1] != FLAME_DIM:
            raise ops.ShapeError(f"converter expects {FLAME_DIM} FLAME values per frame, got {f.shape[-1]}")
        return self.generator(f, blend_experts(self.gate(f), list(self.experts)))


def convert(f, converter: Converter) -> np.ndarray:
    """ARKit weights ``[..., 51]``; 53-wide B2F frames are assembled to 103 first."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] == FACE_DIM:
        f = assemble_flame103(f)
    with torch.no_grad():
        return converter(f).numpy()


def weighted_mse(pred: torch.Tensor, target: torch.Tensor, mouth_close_weight: float = MOUTH_CLOSE_WEIGHT):
    """Mean over samples and all 51 dims, MouthClose's squared error scaled inside the mean."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    w = torch.ones(ARKIT_DIM, dtype=ops.DTYPE)
    w[MOUTH_CLOSE] = mouth_close_weight
    return ((pred - target) ** 2 * w).mean()


# synthetic pairs ------------------------------------------------------------------------------


@dataclass
class SyntheticArkitMap:
    """``arkit = sigmoid(f M + c)`` with a sparse random ``M`` (a stand-in for real paired data)."""

    M: np.ndarray
    c: np.ndarray

    @classmethod
    def create(cls, seed: int = 0, nnz: int = 4) -> "SyntheticArkitMap":
        rng = RngState(seed)
        M = np.zeros((FLAME_DIM, ARKIT_DIM))
        for j in range(ARKIT_DIM):
            rows = rng.choice(FLAME_DIM, nnz, replace=False)
            M[rows, j] = rng.normal((nnz,), 0.8)
        return cls(M, rng.uniform((ARKIT_DIM,), -2.0, 0.0))

    def __call__(self, f) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-(np.asarray(f, dtype=np.float64) @ self.M + self.c)))

    def sample(self, n: int, rng: RngState) -> tuple[np.ndarray, np.ndarray]:
        scale = np.concatenate([np.ones(EXPR_DIM), np.full(FLAME_EXPR - EXPR_DIM, 0.3), np.full(JAW_DIM, 0.2)])
        f = rng.normal((n, FLAME_DIM)) * scale
        return f, self(f)


# training -------------------------------------------------------------------------------------


@dataclass
class ConverterTrainConfig:
    steps: int = 5000
    batch_size: int = 128
    learning_rate: float = 5e-3
    seed: int = 0
    mouth_close_weight: float = MOUTH_CLOSE_WEIGHT


def train_converter(flame, arkit, cfg: ConverterTrainConfig | None = None, converter: Converter | None = None):
    """Fit a converter to paired frames with Adam on the weighted MSE; returns ``(converter, losses)``."""
    cfg = cfg or ConverterTrainConfig()
    X = torch.as_tensor(np.asarray(flame, dtype=np.float64))
    Y = torch.as_tensor(np.asarray(arkit, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("converter training set is empty")
    if X.shape[0] != Y.shape[0] or X.shape[1] != FLAME_DIM or Y.shape[1] != ARKIT_DIM:
        raise ValueError(f"need [N, {FLAME_DIM}] and [N, {ARKIT_DIM}] pairs, got {tuple(X.shape)} and {tuple(Y.shape)}")
    model = converter or Converter(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    rng = RngState(cfg.seed + 1)
    n = X.shape[0]
    bs = min(cfg.batch_size, n)
    losses = []
    for step in range(cfg.steps):
        idx = torch.as_tensor(rng.choice(n, bs, replace=False))
        opt.zero_grad(set_to_none=True)
        loss = weighted_mse(model(X[idx]), Y[idx], cfg.mouth_close_weight)
        if not math.isfinite(loss.item()):
            raise FloatingPointError(f"converter loss became non-finite at step {step}")
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return model, losses


# documents ------------------------------------------------------------------------------------


def converter_document(model: Converter) -> dict:
    return {
        "format_version": formats.FORMAT_VERSION,
        "kind": "arkit-converter",
        "seed": model.seed,
        "n_experts": model.n_experts,
        "arkit_names": list(ARKIT_NAMES),
        "params": {k: formats.tensor_entry(v.detach().numpy()) for k, v in model.state_dict().items()},
    }


def save_converter(path, model: Converter) -> None:
    formats.write_document(path, converter_document(model))


def load_converter(path) -> Converter:
    doc = formats.read_document(path)
    if doc.get("format_version") != formats.FORMAT_VERSION or doc.get("kind") != "arkit-converter":
        raise formats.FormatError(f"{path}: not a version-{formats.FORMAT_VERSION} converter document")
    model = Converter(doc["seed"], doc["n_experts"])
    own = model.state_dict()
    if set(own) != set(doc["params"]):
        raise formats.FormatError(f"{path}: converter parameter names do not match")
    loaded = {}
    for k, entry in doc["params"].items():
        arr = formats.entry_array(entry)
        if arr.shape != tuple(own[k].shape):
            raise formats.FormatError(f"{path}: {k} has shape {arr.shape}, expected {tuple(own[k].shape)}")
        loaded[k] = torch.from_numpy(arr)
    model.load_state_dict(loaded)
    return model
