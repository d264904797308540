"""Command-line entry point: ``b2f <command> ...``.

Diagnostics and reports go to stderr; data goes to files only.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import formats
from .core.ops import ShapeError
from .core.rng import RngState
from .data.motion import FACE_DIM, MotionError, segment_clips
from .data.synthetic import generate_synthetic_corpus
from .flame2arkit import ConverterTrainConfig

log = logging.getLogger("b2f")

FORMATS_HELP = """\
file formats (all JSON text, format_version 1; arrays of numbers on one line, one frame per line):
  motion clip     {"format_version", "kind": "body"|"face"|"arkit", "fps", "dims", ..., "frames": [[...], ...]}
                  body frames are 120 wide (10 key-joint positions, 10 rot6d, 10 velocities, character frame);
                  face frames are 53 wide (50 expression + 3 jaw); FLAME input to convert may be 53 or 103 wide
  corpus dir      clips/<id>.body.json + clips/<id>.face.json, optional factors.json (synthetic ground truth)
  style           {"kind": "style", "hard", "D", "K", "values": [D*K numbers]}
  style schedule  {"kind": "style-schedule", "keys": [{"frame", "style": [...]} | {"frame", "blend": {"a", "b", "alpha"}}]}
  checkpoint      {"kind": "b2f-checkpoint", "config", "params": {name: {"shape", "values"}}, "state"}
  train config    JSON object with TrainConfig fields, plus optional "model" (B2FConfig fields or a preset name)
  converter       {"kind": "arkit-converter", "seed", "n_experts", "arkit_names", "params"}
  pairs           {"kind": "flame-arkit-pairs", "flame": [[103 numbers], ...], "arkit": [[51 numbers], ...]}
seeds: --seed, else the B2F_SEED environment variable, else 0.
"""


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("B2F_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"B2F_SEED must be an integer, got {env!r}") from None
    return 0


def _parser_with(sub, name, help_text, description=None):
    return sub.add_parser(
        name, help=help_text, description=description or help_text, epilog=FORMATS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )


# commands ---------------------------------------------------------------------------------


def cmd_synth(args) -> None:
    seed = _seed(args)
    clips, records = generate_synthetic_corpus(seed=seed, n_clips=args.clips, n_styles=args.styles, clip_len=args.clip_len)
    formats.write_corpus(args.out, clips, records)
    log.info("wrote %d clips (%d styles, seed %d) to %s", len(clips), args.styles, seed, args.out)


def _model_config(spec):
    from .model import B2FConfig

    if spec is None or spec == "full":
        return B2FConfig()
    if isinstance(spec, str):
        presets = {"reduced": B2FConfig.reduced, "micro": B2FConfig.micro}
        if spec not in presets:
            raise ValueError(f"unknown model preset {spec!r} (choose full, reduced or micro)")
        return presets[spec]()
    spec = dict(spec)
    preset = spec.pop("preset", "full")
    base = _model_config(preset).to_dict()
    base.update(spec)
    return B2FConfig.from_dict(base)


def cmd_train(args) -> None:
    from .trainer import TrainConfig, train

    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    model_spec = raw.pop("model", args.preset)
    for flag in ("epochs", "batch_size", "learning_rate", "checkpoint_interval"):
        if getattr(args, flag) is not None:
            raw[flag] = getattr(args, flag)
    raw["seed"] = _seed(args) if (args.seed is not None or "seed" not in raw) else raw["seed"]
    cfg = TrainConfig.from_dict(raw)
    mcfg = _model_config(model_spec)
    mcfg.seed = cfg.seed
    clips, _ = formats.read_corpus(args.corpus)
    segments = segment_clips(clips)
    log.info("resolved train config: %s", json.dumps(cfg.to_dict()))
    log.info("resolved model config: %s", json.dumps(mcfg.to_dict()))
    log.info("seed %d, %d clips, %d segments", cfg.seed, len(clips), len(segments))
    out = Path(args.out)
    result = train(cfg, segments, mcfg, out_dir=out, resume=args.resume, log_path=out / "log.jsonl")
    last = result.history[-1] if result.history else {}
    terms = "  ".join(f"{k}={last[k]:.6g}" for k in ("recon", "align", "kl", "consi", "cross") if k in last)
    log.info("done: %d epochs, %d aborted steps; final epoch means: %s", result.epochs_done, result.aborted_steps, terms)


def _load_body(path, model):
    header, frames = formats.read_clip(path, "body")
    if frames.shape[1] != model.cfg.body_dim:
        raise ShapeError(f"{path}: body clip has {frames.shape[1]} values per frame, model expects {model.cfg.body_dim}")
    return header, frames


def _load_face(path):
    header, frames = formats.read_clip(path, "face")
    if frames.shape[1] != FACE_DIM:
        raise ShapeError(f"{path}: face clip has {frames.shape[1]} values per frame, expected {FACE_DIM}")
    return header, frames


def _style_from_args(args, model):
    from .inference import style_code

    if formats.read_document(args.style_ref).get("kind") == "style":
        values, meta = formats.read_style(args.style_ref)
        if values.size != model.cfg.style_dim:
            raise ShapeError(f"{args.style_ref}: style has {values.size} values, model expects {model.cfg.style_dim}")
        return values
    _, ref = _load_face(args.style_ref)
    return style_code(model, ref, args.mode, args.seed if args.seed is not None else None)


def cmd_generate(args) -> None:
    from .inference import StyleSchedule, generate_from_style, generate_with_schedule
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.model)
    header, body = _load_body(args.body, model)
    if args.schedule:
        schedule = StyleSchedule.from_document(formats.read_document(args.schedule), args.schedule)
        face = generate_with_schedule(model, body, schedule).frames
    else:
        if not args.style_ref:
            raise ValueError("generate needs --style-ref or --schedule")
        face = generate_from_style(model, body, _style_from_args(args, model))
    formats.write_clip(args.out, face, "face", header["fps"])
    log.info("wrote %d frames to %s", face.shape[0], args.out)


def cmd_stream(args) -> None:
    from .inference import StreamingGenerator
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.model)
    header, body = _load_body(args.body, model)
    stream = StreamingGenerator(model, _style_from_args(args, model), window=args.window)
    out, times = [], []
    for frame in body:
        t0 = time.perf_counter()
        out.append(stream.push(frame))
        times.append((time.perf_counter() - t0) * 1e3)
    formats.write_clip(args.out, np.stack(out), "face", header["fps"])
    t = np.asarray(times)
    log.info(
        "streamed %d frames (window %d): latency ms mean %.3f  median %.3f  p95 %.3f  max %.3f",
        len(t), args.window, t.mean(), np.median(t), np.percentile(t, 95), t.max(),
    )


def cmd_convert(args) -> None:
    from .flame2arkit import ARKIT_NAMES, FLAME_DIM, convert, load_converter

    conv = load_converter(args.converter)
    doc = formats.read_document(args.in_flame)
    frames = np.asarray(doc["frames"], dtype=np.float64).reshape(-1, doc["dims"])
    if frames.shape[1] not in (FACE_DIM, FLAME_DIM):
        raise ShapeError(f"{args.in_flame}: FLAME frames must be {FACE_DIM} or {FLAME_DIM} wide, got {frames.shape[1]}")
    arkit = convert(frames, conv)
    formats.write_clip(args.out_arkit, arkit, "arkit", doc.get("fps", 30.0), names=list(ARKIT_NAMES))
    log.info("converted %d frames (%d-dim input) to %s", arkit.shape[0], frames.shape[1], args.out_arkit)


def cmd_convert_train(args) -> None:
    from .flame2arkit import SyntheticArkitMap, save_converter, train_converter

    seed = _seed(args)
    if args.pairs:
        doc = formats.read_document(args.pairs)
        if doc.get("kind") != "flame-arkit-pairs":
            raise formats.FormatError(f"{args.pairs}: expected kind 'flame-arkit-pairs'")
        flame, arkit = np.asarray(doc["flame"], float), np.asarray(doc["arkit"], float)
    else:
        mapping = SyntheticArkitMap.create(seed)
        flame, arkit = mapping.sample(args.synthetic, RngState(seed + 100))
    cfg = ConverterTrainConfig(steps=args.steps, learning_rate=args.lr, seed=seed)
    conv, losses = train_converter(flame, arkit, cfg)
    save_converter(args.out, conv)
    log.info("converter trained on %d pairs for %d steps; final loss %.6g", len(flame), cfg.steps, losses[-1])


def _clip_pairs(pred, gt):
    p, g = Path(pred), Path(gt)
    if p.is_dir() != g.is_dir():
        raise ValueError("--pred and --gt must both be files or both be directories")
    if not p.is_dir():
        return [(p.stem, _load_face(p)[1], _load_face(g)[1])]
    pairs = []
    for f in sorted(g.glob("*.json")):
        if not (p / f.name).exists():
            raise FileNotFoundError(f"{p / f.name}: no prediction for ground-truth clip {f.name}")
        pairs.append((f.name.split(".")[0], _load_face(p / f.name)[1], _load_face(f)[1]))
    return pairs


def cmd_eval(args) -> None:
    from .evalkit import evaluate

    report = evaluate(_clip_pairs(args.pred, args.gt))
    print(report.table(), file=sys.stderr)
    if args.report:
        formats.write_document(args.report, report.to_document())


def cmd_probe(args) -> None:
    from .evalkit import alignment_score, style_probe
    from .inference import generate_from_style, style_code
    from .model import load_checkpoint

    model, _ = load_checkpoint(args.model)
    clips, records = formats.read_corpus(args.corpus)
    if records is None:
        raise ValueError(f"{args.corpus}: probe needs factors.json with style labels")
    style_of = {r.clip_id: r.style_id for r in records}
    labels = sorted(set(style_of.values()))
    if len(labels) < 2:
        raise ValueError("probe needs at least 2 styles")
    gt = np.concatenate([c.face.frames for c in clips])
    gt_labels = np.concatenate([[style_of[c.clip_id]] * len(c) for c in clips])
    rng = RngState(_seed(args))
    gen, req, align = [], [], []
    for c in clips:
        others = [o for o in clips if style_of[o.clip_id] != style_of[c.clip_id]]
        ref = others[int(rng.integers(0, len(others) - 1))]
        gen.append(generate_from_style(model, c.body.frames, style_code(model, ref.face.frames)))
        req.append([style_of[ref.clip_id]] * len(c))
        align.append(alignment_score(c.body.frames, c.face.frames, model))
    acc = style_probe(gt, gt_labels, np.concatenate(gen), np.concatenate(req), seed=_seed(args))
    print(f"style probe accuracy {acc:.4f} (chance {1 / len(labels):.4f}, {len(labels)} styles)", file=sys.stderr)
    print(f"content alignment {float(np.mean(align)):.4f}", file=sys.stderr)


def cmd_style(args) -> None:
    from .inference import changed_blocks, interpolate_styles, is_hard, perturb_code, style_code

    if args.style_cmd == "interp":
        a, ma = formats.read_style(args.a)
        b, mb = formats.read_style(args.b)
        if (ma["D"], ma["K"]) != (mb["D"], mb["K"]):
            raise ValueError("style files have different D/K")
        e = interpolate_styles(a, b, args.alpha)
        formats.write_style(args.out, e, ma["D"], ma["K"], is_hard(e, ma["D"], ma["K"]))
    elif args.style_cmd == "perturb":
        e, meta = formats.read_style(args.input)
        p = perturb_code(e, args.n, RngState(_seed(args)), meta["D"], meta["K"])
        formats.write_style(args.out, p, meta["D"], meta["K"], True)
    elif args.style_cmd == "diff":
        a, ma = formats.read_style(args.a)
        b, _ = formats.read_style(args.b)
        print(f"{changed_blocks(a, b, ma['D'], ma['K'])} blocks differ", file=sys.stderr)
    elif args.style_cmd == "encode":
        from .model import load_checkpoint

        model, _ = load_checkpoint(args.model)
        _, ref = _load_face(args.ref)
        e = style_code(model, ref, args.mode, args.seed)
        formats.write_style(args.out, e, model.cfg.style_D, model.cfg.style_K, args.mode == "hard")


# parser ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="b2f", description="Body-to-face motion generation pipeline.", epilog=FORMATS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = _parser_with(sub, "synth", "write a synthetic corpus with factor sidecar")
    s.add_argument("--seed", type=int)
    s.add_argument("--clips", type=int, default=64)
    s.add_argument("--styles", type=int, default=4)
    s.add_argument("--clip-len", type=int, default=360, help="frames per clip")
    s.add_argument("--out", required=True, help="output corpus directory")
    s.set_defaults(func=cmd_synth)

    s = _parser_with(sub, "train", "train a model on a corpus directory")
    s.add_argument("--config", help="training config file")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True, help="directory for checkpoints and log.jsonl")
    s.add_argument("--preset", default="full", choices=["full", "reduced", "micro"], help="model widths if the config has no 'model'")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--learning-rate", dest="learning_rate", type=float)
    s.add_argument("--checkpoint-interval", dest="checkpoint_interval", type=int)
    s.set_defaults(func=cmd_train)

    for name, helptext, func in (
        ("generate", "generate a face clip from a body clip and a style reference", cmd_generate),
        ("stream", "simulate real-time generation with a 50-frame sliding window", cmd_stream),
    ):
        s = _parser_with(sub, name, helptext)
        s.add_argument("--model", required=True, help="checkpoint")
        s.add_argument("--body", required=True, help="body clip")
        s.add_argument("--style-ref", dest="style_ref", help="face clip or style file")
        s.add_argument("--out", required=True, help="output face clip")
        s.add_argument("--mode", default="hard", choices=["hard", "soft"])
        s.add_argument("--seed", type=int, help="sample Gumbel noise with this seed (default: none, deterministic)")
        if name == "generate":
            s.add_argument("--schedule", help="style schedule file (per-frame style)")
        else:
            s.add_argument("--window", type=int, default=50)
        s.set_defaults(func=func)

    s = _parser_with(sub, "convert", "convert FLAME frames (53 or 103 wide) to 51 ARKit weights")
    s.add_argument("--converter", required=True)
    s.add_argument("--in-flame", dest="in_flame", required=True)
    s.add_argument("--out-arkit", dest="out_arkit", required=True)
    s.set_defaults(func=cmd_convert)

    s = _parser_with(sub, "convert-train", "train a FLAME-to-ARKit converter")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--pairs", help="pairs file")
    src.add_argument("--synthetic", type=int, metavar="N", help="train on N synthetic pairs")
    s.add_argument("--steps", type=int, default=ConverterTrainConfig.steps)
    s.add_argument("--lr", type=float, default=ConverterTrainConfig.learning_rate)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_convert_train)

    s = _parser_with(sub, "eval", "l2 error and std-dev difference between predicted and ground-truth face clips")
    s.add_argument("--pred", required=True, help="face clip or directory of clips")
    s.add_argument("--gt", required=True, help="face clip or directory of clips")
    s.add_argument("--report", help="write the report document here")
    s.set_defaults(func=cmd_eval)

    s = _parser_with(sub, "probe", "style probe accuracy and content alignment on a synthetic corpus")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_probe)

    s = _parser_with(sub, "style", "style embedding operations")
    ss = s.add_subparsers(dest="style_cmd", required=True)
    t = _parser_with(ss, "interp", "blend two style files: (1 - alpha) a + alpha b")
    t.add_argument("--a", required=True)
    t.add_argument("--b", required=True)
    t.add_argument("--alpha", type=float, required=True)
    t.add_argument("--out", required=True)
    t = _parser_with(ss, "perturb", "move the active index of n randomly chosen blocks of a hard code")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t = _parser_with(ss, "diff", "report the number of blocks whose argmax differs")
    t.add_argument("--a", required=True)
    t.add_argument("--b", required=True)
    t = _parser_with(ss, "encode", "encode a face clip into a style file")
    t.add_argument("--model", required=True)
    t.add_argument("--ref", required=True)
    t.add_argument("--mode", default="hard", choices=["hard", "soft"])
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    s.set_defaults(func=cmd_style)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="b2f: %(message)s", stream=sys.stderr, force=True
    )
    if args.command == "synth" and args.styles < 2:
        parser.error("--styles must be at least 2")
    try:
        args.func(args)
    except (MotionError, ShapeError, formats.FormatError, ValueError, KeyError, OSError) as e:
        print(f"b2f: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
