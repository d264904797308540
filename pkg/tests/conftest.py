import numpy as np
import pytest
import torch

from b2f.core import RngState
from b2f.data import generate_synthetic_corpus, sample_batch, segment_clips
from b2f.losses import loss_terms, weighted_terms
from b2f.model import B2F, B2FConfig

MICRO_BODY = 12


@pytest.fixture(scope="session")
def micro_setup():
    """Micro model plus two 2-clip, 8-frame batches cut from the synthetic corpus.

    The body input keeps the first 12 channels so the micro encoder stays tiny.
    """
    clips, _ = generate_synthetic_corpus(seed=0, n_clips=4, n_styles=2, clip_len=180)
    segs = segment_clips(clips)
    a = sample_batch(segs, 2, RngState(1), "A", length=8)
    b = sample_batch(segs, 2, RngState(2), "B", length=8)
    a.body, b.body = a.body[..., :MICRO_BODY], b.body[..., :MICRO_BODY]
    model = B2F(B2FConfig.micro(seed=5, style_K=4))
    return model, a, b


def micro_objective(model, a, b, fraction=0.3, seed=7):
    """Weighted loss terms as a 1-D tensor (sums to the total objective)."""

    def f():
        terms = loss_terms(model, a.body, a.face, a.style, b.style, RngState(seed))
        return torch.stack(list(weighted_terms(terms, fraction).values()))

    return f


def structural_zero_coords(model):
    """Flat indices of first-decoder-layer self-attention key rows fed by the broadcast style.

    A time-constant input shifts every key score of a query equally, so these
    rows get an identically zero gradient whenever the style is broadcast.
    """
    wk = model.generator.layers[0].self_attn.wk
    c, d = model.cfg.content_dim, wk.shape[1]
    dead = {r * d + j for r in range(c, wk.shape[0]) for j in range(d)}
    live = [i for i in range(wk.numel()) if i not in dead]
    return wk, sorted(dead), live


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the recorded measurements."""
    lines = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and rep.passed:
                continue
            n = int(nodeid.split("test_criterion_")[1].split("_")[0])
            detail = dict(rep.user_properties).get("detail", "")
            lines[n] = f"criterion {n:2d}: {'PASS' if rep.passed else 'FAIL'}  {detail}".rstrip()
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
