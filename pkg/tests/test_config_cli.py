"""YAML run configs and the command-line front-end."""

import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from v2a import cli, dsp
from v2a.config import load_config, parse_config
from v2a.data import read_features, write_wav
from v2a.dsp import AudioClip
from v2a.errors import InvalidConfiguration
from v2a.training import A2A_MEL_SCHEDULE, MEL_OPTIMIZER, checkpoint_load, lr_at


# ---------------------------------------------------------------- config


def test_parse_defaults():
    cfg = parse_config({"model": {"family": "a2a-mel-vs", "width": 0.125}})
    tc = cfg.train_config()
    assert tc.optimizer == MEL_OPTIMIZER and tc.schedule == A2A_MEL_SCHEDULE
    assert cfg.seed == 0 and cfg.deterministic and cfg.threads == 1


def test_parse_overrides_and_preset():
    cfg = parse_config({
        "model": {"family": "v2a-mel-vs"},
        "optimizer": {"kind": "adamw", "lr": 5e-4, "beta1": 0.9, "beta2": 0.98, "weight_decay": 0.01},
        "schedule": None,
        "training": {"batch_size": 3, "grad_clip": 1.0},
        "regime": {"preset": "grid4-ft-decoder", "frozen_epochs": 2},
        "seed": 4,
    })
    tc = cfg.train_config()
    assert tc.optimizer.lr == 5e-4 and tc.schedule is None and tc.batch_size == 3 and tc.grad_clip == 1.0
    assert tc.seed == 4
    assert cfg.regime.regime == "ft_decoder" and cfg.regime.frozen_epochs == 2 and cfg.regime.decoder_lr == 1e-4


@pytest.mark.parametrize("raw", [
    {"model": {"family": "v2a-mel-vs"}, "extra": 1},
    {"model": {"family": "v2a-mel-vs", "depth": 3}},
    {"model": {"family": "nope"}},
    {"model": {"family": "v2a-mel-vs"}, "training": {"epochs": 3}},
    {"model": {"family": "v2a-mel-vs"}, "training": {"batch_size": 0}},
    {"model": {"family": "v2a-mel-vs"}, "schedule": {"T0": 0}},
    {"model": {"family": "v2a-mel-vs"}, "regime": {"preset": "missing"}},
    {"model": {"family": "v2a-mel-vs"}, "threads": 0},
    {"optimizer": {"lr": 1e-3}},
    ["not", "a", "mapping"],
])
def test_parse_errors(raw):
    with pytest.raises(InvalidConfiguration):
        parse_config(raw)


def test_load_config_file(tmp_path):
    (tmp_path / "run.yaml").write_text(yaml.safe_dump({"model": {"family": "a2a-wave"},
                                                      "data": {"manifest": "d/manifest.jsonl"}}))
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.data.manifest == str(tmp_path / "d" / "manifest.jsonl")
    with pytest.raises(InvalidConfiguration):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("model: [unclosed")
    with pytest.raises(InvalidConfiguration):
        load_config(tmp_path / "bad.yaml")


# ---------------------------------------------------------------- cli


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("pretrain-a2a", "train-v2a", "eval", "dsp", "synth-data", "lr-dump"):
        assert cmd in out


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["train-v2a", "cfg.yaml"])  # missing --regime
    assert exc.value.code == 2


def test_console_entry_point_runs():
    done = subprocess.run([sys.executable, "-m", "v2a.cli", "lr-dump", "--epochs", "1", "--epoch-len", "2"],
                          capture_output=True, text=True)
    assert done.returncode == 0
    assert [json.loads(line)["step"] for line in done.stdout.splitlines()] == [0, 1]


def test_lr_dump(tmp_path, capsys):
    assert cli.main(["lr-dump", "--T0", "1", "--Tmult", "2", "--epoch-len", "4", "--epochs", "8"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 32
    from v2a.training import ScheduleConfig
    s = ScheduleConfig(1, 1e-3, 0.0, 1, 2)
    assert all(r["lr"] == lr_at(r["step"], 4, s) for r in rows)
    out = tmp_path / "lr.jsonl"
    assert cli.main(["lr-dump", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 200
    assert cli.main(["lr-dump", "--T0", "0"]) == 2
    assert cli.main(["lr-dump", "--epochs", "0"]) == 2


def test_dsp_command(tmp_path, capsys):
    wav = tmp_path / "x.wav"
    write_wav(wav, AudioClip(np.zeros(dsp.SAMPLE_RATE, np.float32), dsp.SAMPLE_RATE))
    assert cli.main(["dsp", "--in", str(wav), "--out", "mel", str(tmp_path / "x.v2ax")]) == 0
    mel = read_features(tmp_path / "x.v2ax")
    assert mel.shape == (80, 80) and np.all(mel == -1.0)
    assert json.loads(capsys.readouterr().out)["rows"] == 80
    assert cli.main(["dsp", "--in", str(wav), "--out", "mfcc", str(tmp_path / "x.mfcc")]) == 0
    assert read_features(tmp_path / "x.mfcc").shape == (80, dsp.N_MFCC)
    assert cli.main(["dsp", "--in", str(tmp_path / "none.wav"), "--out", "mel", str(tmp_path / "y")]) == 2
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    assert cli.main(["dsp", "--in", str(tmp_path / "junk.wav"), "--out", "mel", str(tmp_path / "y")]) == 1


def test_dsp_resamples_other_rates(tmp_path):
    wav = tmp_path / "x16.wav"
    write_wav(wav, AudioClip(np.zeros(16000, np.float32), 16000))
    assert cli.main(["dsp", "--in", str(wav), "--out", "mel", str(tmp_path / "x.v2ax")]) == 0
    assert read_features(tmp_path / "x.v2ax").shape == (80, 80)


def test_synth_data(tmp_path, out_root, capsys):
    assert cli.main(["synth-data", "--clips", "2", "--val-clips", "1", "--noisy-clips", "1",
                     "--duration", "0.4"]) == 0
    manifest = json.loads(capsys.readouterr().out)["manifest"]
    assert manifest.startswith(str(out_root))
    from v2a.data import DatasetManifest
    entries = DatasetManifest.load(manifest).entries
    assert len(entries) == 4 and {e.group for e in entries} == {"clean", "noisy"}
    assert cli.main(["synth-data", "--clips", "0"]) == 2
    assert cli.main(["synth-data", "--duration", "0.3", "--out", str(tmp_path / "x")]) == 2


def test_eval_command(tmp_path, capsys):
    ref, gen = tmp_path / "ref", tmp_path / "gen"
    ref.mkdir(), gen.mkdir()
    t = np.arange(dsp.SAMPLE_RATE) / dsp.SAMPLE_RATE
    clip = AudioClip((0.3 * np.sin(2 * np.pi * 300 * t) * (1 + np.sin(2 * np.pi * 4 * t))).astype(np.float32),
                     dsp.SAMPLE_RATE)
    write_wav(ref / "a.wav", clip)
    write_wav(gen / "a.wav", clip)
    assert cli.main(["eval", "--generated", str(gen), "--reference", str(ref)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["warning_status"] == 0 and abs(summary["aggregate"]["stoi"] - 1) < 1e-6
    assert (gen / "report.jsonl").is_file()
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["eval", "--generated", str(empty), "--reference", str(ref),
                     "--report", str(tmp_path / "r.jsonl")]) == 1
    assert cli.main(["eval", "--generated", str(tmp_path / "nope"), "--reference", str(ref)]) == 2


def _write_run(tmp_path, family, manifest, **extra):
    raw = {"model": {"family": family, "width": 1 / 32},
           "training": {"batch_size": 2, "max_epochs": 1},
           "data": {"manifest": str(manifest)}, **extra}
    path = tmp_path / f"{family}.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_pretrain_and_train_v2a(tmp_path, capsys):
    assert cli.main(["synth-data", "--clips", "2", "--val-clips", "2", "--duration", "0.2",
                     "--out", str(tmp_path / "data")]) == 0
    manifest = json.loads(capsys.readouterr().out)["manifest"]
    a2a_cfg = _write_run(tmp_path, "a2a-mel-vs", manifest)
    assert cli.main(["pretrain-a2a", str(a2a_cfg), "--output-dir", str(tmp_path / "a2a")]) == 0
    ckpt = json.loads(capsys.readouterr().out)["checkpoint"]
    assert checkpoint_load(ckpt).model_config["family"] == "a2a-mel-vs"
    assert (tmp_path / "a2a" / "effective_config.yaml").is_file()
    assert (tmp_path / "a2a" / "metrics.jsonl").read_text().strip()

    v2a_cfg = _write_run(tmp_path, "v2a-mel-vs", manifest)
    out = tmp_path / "v2a"
    assert cli.main(["train-v2a", str(v2a_cfg), "--regime", "ft-decoder", "--init-from", ckpt,
                     "--preset", "grid33-unseen-ft-decoder", "--output-dir", str(out)]) == 0
    assert checkpoint_load(out / "best.ckpt").model_config["family"] == "v2a-mel-vs"
    capsys.readouterr()

    # usage and configuration errors
    assert cli.main(["train-v2a", str(v2a_cfg), "--regime", "scratch", "--init-from", ckpt]) == 2
    assert cli.main(["train-v2a", str(v2a_cfg), "--regime", "ft-decoder"]) == 2
    assert cli.main(["train-v2a", str(v2a_cfg), "--regime", "basic-ft", "--init-from", ckpt,
                     "--preset", "grid4-ft-decoder"]) == 2
    assert cli.main(["train-v2a", str(v2a_cfg), "--regime", "ft-decoder",
                     "--init-from", str(tmp_path / "missing.ckpt")]) == 2
    assert cli.main(["pretrain-a2a", str(v2a_cfg)]) == 2
    assert cli.main(["train-v2a", str(a2a_cfg), "--regime", "scratch"]) == 2
    assert cli.main(["pretrain-a2a", str(tmp_path / "missing.yaml")]) == 2

    # corrupt checkpoint is a runtime failure
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert cli.main(["train-v2a", str(v2a_cfg), "--regime", "ft-decoder", "--init-from", str(bad),
                     "--output-dir", str(tmp_path / "v2b")]) == 1


def test_missing_manifest_is_config_error(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"model": {"family": "a2a-mel-vs"}}))
    assert cli.main(["pretrain-a2a", str(cfg)]) == 2
    cfg.write_text(yaml.safe_dump({"model": {"family": "a2a-mel-vs"}, "data": {"manifest": "nope.jsonl"}}))
    assert cli.main(["pretrain-a2a", str(cfg)]) == 2
