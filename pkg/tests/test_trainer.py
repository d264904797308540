import json
import logging

import numpy as np
import pytest
import torch

from b2f.core import RngState
from b2f.data import MotionError, generate_synthetic_corpus, sample_batch, segment_clips
from b2f.losses import TERMS, KlSchedule, LossWeights, kl_weight, recon_loss
from b2f.model import B2F, B2FConfig, load_checkpoint
from b2f.trainer import TrainConfig, epoch_plan, make_optimizer, train, train_step

from .conftest import MICRO_BODY

MICRO = B2FConfig.micro(body_dim=MICRO_BODY, seed=1, style_K=4)


@pytest.fixture(scope="module")
def segments():
    clips, _ = generate_synthetic_corpus(seed=0, n_clips=4, n_styles=2, clip_len=180)
    segs = segment_clips(clips)
    for s in segs:
        s.body = s.body[:, :MICRO_BODY]
    return segs


def small_cfg(**kw):
    base = dict(batch_size=2, learning_rate=1e-3, epochs=4, seed=3, checkpoint_interval=2, length_range=(8, 12))
    base.update(kw)
    return TrainConfig(**base)


def batches(segments, seed):
    rng = RngState(seed)
    return sample_batch(segments, 2, rng, "A", length=8), sample_batch(segments, 2, rng, "B", length=10)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"batch_sz": 3})
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.weight_decay, cfg.betas, cfg.adam_eps) == (32, 1e-4, 5e-5, (0.9, 0.999), 1e-8)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))).to_dict() == cfg.to_dict()


def test_step_makes_two_updates_with_crossed_styles(segments, monkeypatch):
    import b2f.trainer as tr

    model = B2F(MICRO)
    opt = make_optimizer(model, small_cfg())
    a, b = batches(segments, 0)
    calls = []
    real = tr.total_loss

    def spy(model, batch, other, *args, **kw):
        calls.append((batch.batch_id, other.batch_id, np.array_equal(batch.style, a.style), np.array_equal(other.style, b.style)))
        return real(model, batch, other, *args, **kw)

    monkeypatch.setattr(tr, "total_loss", spy)
    out = train_step(a, b, model, opt, 0.1, RngState(0), small_cfg())
    assert [c[:2] for c in calls] == [("A", "B"), ("B", "A")]
    assert calls[0][2:] == (True, True)
    assert out is not None and all(set(TERMS) <= set(br) for br in out)
    assert all(s["step"] == 2 for s in opt.state.values())


def test_recon_only_step_decreases_recon(segments):
    model = B2F(MICRO)
    cfg = small_cfg(learning_rate=1e-3, weights=LossWeights(align=0, consi=0, cross=0), schedule=KlSchedule(max_value=0.0))
    opt = make_optimizer(model, cfg)
    a, _ = batches(segments, 1)
    with torch.no_grad():
        noise = RngState(9).gumbel((2, 2, 4))

    def recon():
        style, _ = model.encode_style(a.style, noise=noise)
        return recon_loss(a.face, model.generate(model.encode_content(a.body, "body"), style)).item()

    before = recon()
    train_step(a, a, model, opt, 0.5, RngState(0), cfg)
    assert recon() < before


def test_nonfinite_step_rolls_back(segments, caplog):
    model = B2F(MICRO)
    cfg = small_cfg()
    opt = make_optimizer(model, cfg)
    a, b = batches(segments, 2)
    train_step(a, b, model, opt, 0.1, RngState(0), cfg)
    params = [p.detach().clone() for p in model.parameters()]
    moments = {k: {n: v.clone() for n, v in s.items()} for k, s in opt.state.items()}
    b.face = b.face.copy()
    b.face[0, 0, 0] = np.nan
    with caplog.at_level(logging.WARNING):
        assert train_step(a, b, model, opt, 0.1, RngState(0), cfg) is None
    assert "rolled back" in caplog.text
    assert all(torch.equal(p, q) for p, q in zip(model.parameters(), params))
    for k, s in opt.state.items():
        assert all(torch.equal(v, moments[k][n]) for n, v in s.items())


def test_epoch_plan():
    assert epoch_plan(16, TrainConfig()) == (16, 1)
    assert epoch_plan(16, TrainConfig(batch_size=4)) == (4, 4)
    assert epoch_plan(10, TrainConfig(batch_size=4)) == (4, 3)
    with pytest.raises(MotionError):
        epoch_plan(1, TrainConfig())


def test_empty_corpus_rejected():
    with pytest.raises(MotionError, match="empty"):
        train(small_cfg(), [], MICRO)


def test_seed_determinism_and_resume(tmp_path, segments):
    cfg = small_cfg()
    full = train(cfg, segments, MICRO, out_dir=tmp_path / "full", log_path=tmp_path / "full.jsonl")
    again = train(cfg, segments, MICRO)
    assert all(torch.equal(p, q) for p, q in zip(full.model.parameters(), again.model.parameters()))

    resumed = train(cfg, segments, MICRO, resume=tmp_path / "full" / "epoch_0002.json", out_dir=tmp_path / "res")
    assert all(torch.equal(p, q) for p, q in zip(full.model.parameters(), resumed.model.parameters()))
    assert (tmp_path / "full" / "final.json").read_bytes() == (tmp_path / "res" / "final.json").read_bytes()

    model, state = load_checkpoint(tmp_path / "full" / "final.json")
    assert state["epochs_done"] == 4 and "rng" in state and "optimizer" in state
    assert all(torch.equal(p, q) for p, q in zip(full.model.state_dict().values(), model.state_dict().values()))


def test_log_lines(tmp_path, segments):
    cfg = small_cfg(epochs=4, checkpoint_interval=0)
    train(cfg, segments, MICRO, log_path=tmp_path / "log.jsonl")
    records = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    epochs = [r for r in records if r["event"] == "epoch"]
    updates = [r for r in records if r["event"] == "update"]
    assert [r["kl_weight"] for r in epochs] == [kl_weight(e / 4) for e in range(4)] == [0.0, 0.3, 0.3, 0.15]
    assert updates and all(set(r["terms"]) == set(TERMS) for r in updates)
    assert [r["batch"] for r in updates[:2]] == ["A", "B"]


def test_normalization_stats_from_corpus(segments):
    res = train(small_cfg(epochs=1, checkpoint_interval=0), segments, MICRO)
    body = np.concatenate([s.body for s in segments])
    np.testing.assert_allclose(res.model.body_encoder.standardize.mean.numpy(), body.mean(0), atol=1e-12)
