"""Seeded random source shared by sampling, initialization and Gumbel noise."""
from __future__ import annotations

import copy

import numpy as np
import torch


class RngState:
    """Single-owner wrapper around a PCG64 stream.

    The full stream position is JSON-serializable via :meth:`state_dict`, which
    is what makes checkpoint resume bitwise exact.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    # sampling ---------------------------------------------------------------

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in the closed range [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def gumbel(self, shape) -> torch.Tensor:
        u = self._gen.uniform(size=shape)
        u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
        return torch.from_numpy(-np.log(-np.log(u)))

    def spawn(self) -> "RngState":
        """Derive an independent child stream; advances this stream."""
        child = RngState.__new__(RngState)
        child.seed = int(self._gen.integers(0, 2**63 - 1))
        child._gen = np.random.Generator(np.random.PCG64(child.seed))
        return child

    # persistence ------------------------------------------------------------

    def state_dict(self) -> dict:
        return {"seed": self.seed, "bit_generator": copy.deepcopy(self._gen.bit_generator.state)}

    @classmethod
    def from_state_dict(cls, state: dict) -> "RngState":
        rng = cls(state["seed"])
        bg = copy.deepcopy(state["bit_generator"])
        # JSON round-trips turn the uint128 ints into plain ints already; nothing to coerce.
        rng._gen.bit_generator.state = bg
        return rng

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed})"
