"""Text document formats: motion clips, factor sidecars, style codes, checkpoints.

Every document is JSON written by one deterministic serializer: numeric
arrays go on a single line, arrays of arrays put one row per line (one frame
per line for clips). Floats are emitted as their shortest round-tripping
repr, so write -> read -> write is byte-identical.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
CLIP_KINDS = ("body", "face", "arkit")


class FormatError(ValueError):
    pass


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _scalar(x) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        raise FormatError(f"non-finite value {x!r} cannot be written")
    return json.dumps(x)


def _dump(obj, indent: int) -> str:
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_dump(v, indent + 2)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if all(_is_number(v) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        if all(isinstance(v, (list, tuple)) and all(_is_number(u) for u in v) for v in obj):
            rows = [f"{pad}  " + _dump(v, indent + 2) for v in obj]
            return "[\n" + ",\n".join(rows) + "\n" + pad + "]"
        return "[" + ", ".join(_dump(v, indent) for v in obj) + "]"
    if isinstance(obj, (np.floating, np.integer)):
        return _scalar(obj.item())
    return _scalar(obj)


def dumps(doc: dict) -> str:
    return _dump(doc, 0) + "\n"


def write_document(path, doc: dict) -> None:
    Path(path).write_text(dumps(doc))


def read_document(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not a valid document ({e})") from e


def _check_version(doc: dict, path, kind: str | tuple[str, ...]) -> None:
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    kinds = (kind,) if isinstance(kind, str) else kind
    if doc.get("kind") not in kinds:
        raise FormatError(f"{path}: expected kind in {kinds}, found {doc.get('kind')!r}")


# motion clips ----------------------------------------------------------------------


def clip_document(frames: np.ndarray, kind: str, fps: float, **extra) -> dict:
    if kind not in CLIP_KINDS:
        raise FormatError(f"unknown clip kind {kind!r}")
    frames = np.asarray(frames, dtype=np.float64)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "fps": float(fps), "dims": int(frames.shape[1])}
    doc.update(extra)
    doc["frames"] = frames.tolist()
    return doc


def write_clip(path, frames: np.ndarray, kind: str, fps: float, **extra) -> None:
    write_document(path, clip_document(frames, kind, fps, **extra))


def read_clip(path, kind: str | tuple[str, ...] = CLIP_KINDS) -> tuple[dict, np.ndarray]:
    """Return ``(header, frames)``; header is the document minus ``frames``."""
    doc = read_document(path)
    _check_version(doc, path, kind)
    frames = np.asarray(doc.pop("frames"), dtype=np.float64).reshape(-1, doc["dims"])
    return doc, frames


# synthetic corpus -------------------------------------------------------------------


def write_corpus(out_dir, clips, records=None) -> None:
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    for clip in clips:
        write_clip(out / "clips" / f"{clip.clip_id}.body.json", clip.body.frames, "body", clip.body.fps)
        write_clip(out / "clips" / f"{clip.clip_id}.face.json", clip.face.frames, "face", clip.face.fps)
    if records is not None:
        write_factors(out / "factors.json", records)


def read_corpus(corpus_dir):
    """Load every ``<id>.body.json``/``<id>.face.json`` pair, plus factors when present."""
    from .data.motion import BodyMotionSequence, Clip, FacialMotionSequence

    root = Path(corpus_dir)
    clip_dir = root / "clips"
    if not clip_dir.is_dir():
        raise FileNotFoundError(f"{root}: no clips/ directory")
    clips = []
    for body_path in sorted(clip_dir.glob("*.body.json")):
        clip_id = body_path.name[: -len(".body.json")]
        bh, body = read_clip(body_path, "body")
        fh, face = read_clip(clip_dir / f"{clip_id}.face.json", "face")
        clips.append(Clip(clip_id, BodyMotionSequence(body, bh["fps"]), FacialMotionSequence(face, fh["fps"])))
    records = read_factors(root / "factors.json") if (root / "factors.json").exists() else None
    return clips, records


def write_factors(path, records) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": "factors", "clips": {r.clip_id: r.to_dict() for r in records}}
    write_document(path, doc)


def read_factors(path):
    from .data.synthetic import SyntheticFactorRecord

    doc = read_document(path)
    _check_version(doc, path, "factors")
    return [SyntheticFactorRecord.from_dict(k, v) for k, v in doc["clips"].items()]


# style codes --------------------------------------------------------------------------


def style_document(values, D: int, K: int, hard: bool) -> dict:
    values = [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]
    if len(values) != D * K:
        raise FormatError(f"style embedding has {len(values)} values, expected D*K = {D * K}")
    return {"format_version": FORMAT_VERSION, "kind": "style", "hard": bool(hard), "D": D, "K": K, "values": values}


def write_style(path, values, D: int, K: int, hard: bool) -> None:
    write_document(path, style_document(values, D, K, hard))


def read_style(path) -> tuple[np.ndarray, dict]:
    doc = read_document(path)
    _check_version(doc, path, "style")
    values = np.asarray(doc["values"], dtype=np.float64)
    if values.size != doc["D"] * doc["K"]:
        raise FormatError(f"{path}: {values.size} values for D={doc['D']}, K={doc['K']}")
    return values, {"hard": doc["hard"], "D": doc["D"], "K": doc["K"]}


# tensors -------------------------------------------------------------------------------


def tensor_entry(array) -> dict:
    a = np.asarray(array, dtype=np.float64)
    return {"shape": list(a.shape), "values": a.reshape(-1).tolist()}


def entry_array(entry: dict) -> np.ndarray:
    return np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
