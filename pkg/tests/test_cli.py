import json
import subprocess
import sys

import numpy as np
import pytest

from salad.cli import run
from salad.features import FoaSignal, write_foa_wav
from salad.model import SaladConfig, build_model, save_checkpoint
from salad.simulate import MixtureSpec, RoomConfig, image_source_srir, render_mixture, synthetic_speech

TINY = dict(n_frames=3, n_freq=16, conv_channels=2, conv_blocks=1, pool_sizes=(4,), width=8,
            n_heads=2, grid_alpha=90, fft_size=32)


@pytest.fixture
def files(tmp_path):
    save_checkpoint(build_model(SaladConfig(**TINY, variant="CMH"), seed=0), tmp_path / "m.sldc")
    room = RoomConfig([6.0, 6.0, 3.0], 0.3, [3.0, 3.0, 1.5], [[5.0, 3.5, 2.0], [2.0, 5.0, 1.0]])
    srirs = image_source_srir(room, beta=0.0)
    rng = np.random.default_rng(0)
    sig, _ = render_mixture(srirs, [synthetic_speech(rng, 16000) for _ in range(2)], MixtureSpec(2))
    write_foa_wav(tmp_path / "x.wav", FoaSignal(sig.samples / np.abs(sig.samples).max(), 16000))
    return tmp_path


def test_grid_prints_class_count(capsys):
    assert run(["grid", "--alpha", "10"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "C = 429"
    assert "pairwise separation: min 8.642 deg" in out


def test_grid_csv(capsys):
    assert run(["grid", "--alpha", "90", "--csv", "-"]) == 0
    lines = capsys.readouterr().out.splitlines()
    i = lines.index("index,elevation_deg,azimuth_deg")
    assert len(lines) - i - 1 == 7


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "salad.cli", "grid", "--alpha", "20"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("C = 114")
    assert "resolved config" in res.stderr


def test_unknown_subcommand_exits_1(capsys):
    assert run(["dance"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_missing_required(capsys):
    assert run(["grid", "--colour", "red"]) == 1
    assert run(["localize", "--sources", "2"]) == 1
    assert "needs --model, --in" in capsys.readouterr().err
    assert run(["grid", "--threads", "0"]) == 1


def test_bad_model_file_exits_2(files, capsys):
    (files / "bad.sldc").write_bytes(b"NOPE" + bytes(40))
    assert run(["localize", "--model", str(files / "bad.sldc"), "--in", str(files / "x.wav")]) == 2
    assert "error" in capsys.readouterr().err
    assert run(["tramp", "--in", str(files / "missing.wav")]) == 2


def test_localize_prints_one_line_per_source(files, capsys):
    assert run(["localize", "--model", str(files / "m.sldc"), "--in", str(files / "x.wav"),
                "--sources", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and all(l.startswith("az ") and " el " in l for l in lines)


def test_tramp_finds_both_sources(files, capsys):
    assert run(["tramp", "--in", str(files / "x.wav"), "--sources", "2", "--alpha", "20"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2


def test_config_precedence(files, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"alpha": 20}))
    assert run(["grid", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.startswith("C = 114")
    assert run(["grid", "--config", str(cfg), "--alpha", "90"]) == 0
    assert capsys.readouterr().out.startswith("C = 7")
    cfg.write_text(json.dumps({"input": str(files / "x.wav"), "sources": 2}))
    assert run(["tramp", "--config", str(cfg)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["grid", "--config", str(cfg)]) == 1
    cfg.write_text("[1, 2]")
    assert run(["grid", "--config", str(cfg)]) == 1


def test_threads_do_not_change_output(files, capsys):
    outs = []
    for t in ("1", "3"):
        assert run(["localize", "--model", str(files / "m.sldc"), "--in", str(files / "x.wav"),
                    "--sources", "2", "--threads", t]) == 0
        assert run(["tramp", "--in", str(files / "x.wav"), "--sources", "2", "--threads", t]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_simulate_features_train_eval_pipeline(tmp_path, capsys):
    common = ["--fft-size", "32", "--frames", "3", "--bins", "16"]
    for t in ("1", "2"):
        assert run(["simulate", "--n", "3", "--sources", "1", "--out", str(tmp_path / f"d{t}"),
                    "--seed", "4", "--threads", t, *common]) == 0
    assert (tmp_path / "d1/manifest.jsonl").read_bytes() == (tmp_path / "d2/manifest.jsonl").read_bytes()
    for i in range(3):
        f = f"features/{i:06d}.sldf"
        assert (tmp_path / "d1" / f).read_bytes() == (tmp_path / "d2" / f).read_bytes()

    assert run(["features", "--in", str(tmp_path / "d1/wav/000000.wav"), "--out", str(tmp_path / "f/seq"),
                "--frames", "3", "--fft-size", "32", "--bins", "16"]) == 0
    index = (tmp_path / "f/seq.index.jsonl").read_text().splitlines()
    assert len(index) >= 1 and (tmp_path / "f/seq_0000.sldf").exists()

    ckpt = tmp_path / "m.sldc"
    assert run(["train", "--manifest", str(tmp_path / "d1/manifest.jsonl"), "--out", str(ckpt),
                "--arch", "CMH-1enc-2H", "--conv-channels", "2", "--pools", "4", "--alpha", "90",
                "--fft-size", "32", "--epochs", "2", "--batch-size", "2", "--dtype", "float64",
                "--history", str(tmp_path / "h.csv")]) == 0
    assert ckpt.exists() and len((tmp_path / "h.csv").read_text().splitlines()) == 3
    capsys.readouterr()
    assert run(["eval", "--model", str(ckpt), "--manifest", str(tmp_path / "d1/manifest.jsonl"),
                "--csv", "-"]) == 0
    out = capsys.readouterr().out
    assert "Acc. <10°" in out and "model,acc_10,acc_15,mean_err" in out

    assert run(["bench", "--model", str(ckpt), "--workers", "1,2", "--warmup", "1", "--runs", "3",
                "--csv", str(tmp_path / "b.csv")]) == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 7


def test_simulate_rejects_bad_source_count(tmp_path):
    assert run(["simulate", "--n", "1", "--sources", "4", "--out", str(tmp_path)]) == 1
