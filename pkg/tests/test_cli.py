import json

import numpy as np
import pytest

from b2f import formats
from b2f.cli import build_parser, main
from b2f.inference import changed_blocks


def hard_style(path, seed):
    e = np.zeros((12, 16))
    e[np.arange(12), np.random.default_rng(seed).integers(0, 16, 12)] = 1
    formats.write_style(path, e.reshape(-1), 12, 16, True)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "4", "--clips", "4", "--styles", "2", "--clip-len", "180", "--out", str(root / "corpus")]) == 0
    (root / "cfg.json").write_text(json.dumps({"model": {"preset": "reduced"}, "batch_size": 2, "length_range": [8, 12]}))
    args = ["train", "--config", str(root / "cfg.json"), "--corpus", str(root / "corpus"), "--out", str(root / "run"),
            "--epochs", "1", "--checkpoint-interval", "0", "--seed", "1"]
    assert main(args) == 0
    return root


def test_synth_is_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("B2F_SEED", "9")
    assert main(["synth", "--clips", "2", "--styles", "2", "--clip-len", "180", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--seed", "9", "--clips", "2", "--styles", "2", "--clip-len", "180", "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.json"))
    assert len(files) == 5
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)


def test_synth_rejects_one_style(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--styles", "1", "--out", str(tmp_path / "x")])
    assert exc.value.code != 0
    assert "styles" in capsys.readouterr().err


def test_help_documents_formats(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "file formats" in out and "B2F_SEED" in out
    sub = build_parser()._subparsers._group_actions[0].choices
    assert {"synth", "train", "generate", "stream", "convert", "convert-train", "eval", "probe", "style"} <= set(sub)
    for name, parser in sub.items():
        assert "file formats" in parser.format_help(), name


def test_train_writes_final_checkpoint_and_log(workspace):
    run = workspace / "run"
    assert (run / "final.json").exists()
    kinds = {json.loads(line)["event"] for line in (run / "log.jsonl").read_text().splitlines()}
    assert {"epoch", "update"} <= kinds


def test_generate_and_stream(workspace, tmp_path):
    corpus = workspace / "corpus" / "clips"
    body = sorted(corpus.glob("*.body.json"))[0]
    ref = sorted(corpus.glob("*.face.json"))[1]
    model = str(workspace / "run" / "final.json")
    out1, out2 = tmp_path / "g1.json", tmp_path / "g2.json"
    for out in (out1, out2):
        assert main(["generate", "--model", model, "--body", str(body), "--style-ref", str(ref), "--out", str(out)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    _, frames = formats.read_clip(out1, "face")
    assert frames.shape == (180, 53)

    short = tmp_path / "short.body.json"
    formats.write_clip(short, formats.read_clip(body)[1][:60], "body", 30.0)
    assert main(["stream", "--model", model, "--body", str(short), "--style-ref", str(ref), "--out", str(tmp_path / "s.json")]) == 0
    assert formats.read_clip(tmp_path / "s.json")[1].shape == (60, 53)


def test_body_width_mismatch_fails(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.body.json"
    formats.write_clip(bad, np.zeros((10, 53)), "body", 30.0)
    ref = sorted((workspace / "corpus" / "clips").glob("*.face.json"))[0]
    code = main(["generate", "--model", str(workspace / "run" / "final.json"), "--body", str(bad),
                 "--style-ref", str(ref), "--out", str(tmp_path / "o.json")])
    assert code != 0
    assert "120" in capsys.readouterr().err
    assert not (tmp_path / "o.json").exists()


def test_eval_identical_is_zero(workspace, tmp_path, capsys):
    ref = sorted((workspace / "corpus" / "clips").glob("*.face.json"))[0]
    assert main(["eval", "--pred", str(ref), "--gt", str(ref), "--report", str(tmp_path / "r.json")]) == 0
    doc = formats.read_document(tmp_path / "r.json")
    assert doc["l2_error"] == 0.0 and doc["std_dev_difference"] == 0.0 and doc["clip_count"] == 1
    assert "1 clips, 180 frames" in capsys.readouterr().err


def test_style_perturb_and_diff(tmp_path, capsys):
    a = tmp_path / "a.json"
    hard_style(a, 0)
    for n in (0, 3, 12):
        out = tmp_path / f"p{n}.json"
        assert main(["style", "perturb", "--in", str(a), "--n", str(n), "--seed", "2", "--out", str(out)]) == 0
        assert changed_blocks(formats.read_style(a)[0], formats.read_style(out)[0]) == n
        capsys.readouterr()
        assert main(["style", "diff", "--a", str(a), "--b", str(out)]) == 0
        assert f"{n} blocks differ" in capsys.readouterr().err
    assert main(["style", "perturb", "--in", str(a), "--n", "13", "--out", str(tmp_path / "x.json")]) == 1


def test_style_interp_endpoint(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    hard_style(a, 0)
    hard_style(b, 1)
    assert main(["style", "interp", "--a", str(a), "--b", str(b), "--alpha", "1.0", "--out", str(tmp_path / "m.json")]) == 0
    assert (tmp_path / "m.json").read_bytes() == b.read_bytes()


def test_convert_train_and_convert(tmp_path):
    conv = tmp_path / "conv.json"
    assert main(["convert-train", "--synthetic", "64", "--steps", "5", "--seed", "1", "--out", str(conv)]) == 0
    src = tmp_path / "f.json"
    formats.write_clip(src, np.random.default_rng(0).normal(size=(7, 53)), "face", 30.0)
    assert main(["convert", "--converter", str(conv), "--in-flame", str(src), "--out-arkit", str(tmp_path / "a.json")]) == 0
    header, frames = formats.read_clip(tmp_path / "a.json", "arkit")
    assert frames.shape == (7, 51) and header["names"][0] == "eyeBlinkLeft"


def test_missing_file_is_error(tmp_path):
    assert main(["eval", "--pred", str(tmp_path / "none.json"), "--gt", str(tmp_path / "none.json")]) == 1
