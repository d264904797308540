"""Central finite-difference gradient checking, independent of autograd's bookkeeping."""
from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

import numpy as np
import torch


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
    coords: Mapping[int, Sequence[int]] | None = None,
) -> float:
    """Max relative error between autograd and central differences.

    ``f`` returns a scalar, or a 1-D tensor of additive parts whose sum is the
    checked function. Differencing each part separately keeps a large part
    from swamping a small one with roundoff; the result is still the central
    difference of the sum.

    ``f`` is re-evaluated from scratch for every perturbation, so any sampling
    inside it must be seeded per call. ``max_coords`` limits the check to a
    seeded random subset of coordinates per tensor; ``coords`` maps a
    parameter's position in ``params`` to an explicit list of flat indices.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``; non-finite values
    give ``inf``.
    """
    params = list(params)
    out = f()
    if not torch.isfinite(out).all():
        return math.inf
    analytic = torch.autograd.grad(out.sum(), params, allow_unused=True)

    picker = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for k, (p, g) in enumerate(zip(params, analytic)):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            n = flat.numel()
            if coords is not None and k in coords:
                idx = coords[k]
            elif max_coords is None or max_coords >= n:
                idx = range(n)
            else:
                idx = picker.choice(n, max_coords, replace=False)
            for i in idx:
                i = int(i)
                orig = flat[i].item()
                flat[i] = orig + eps
                fp = f().reshape(-1)
                flat[i] = orig - eps
                fm = f().reshape(-1)
                flat[i] = orig
                numeric = ((fp - fm) / (2 * eps)).sum().item()
                a = gflat[i].item()
                if not (math.isfinite(numeric) and math.isfinite(a)):
                    return math.inf
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst
