"""Command-line front-end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The default output root is ``$V2A_OUTPUT_ROOT`` (else ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dsp
from .errors import (ChecksumFailure, IncompatibleCheckpoint, InvalidArgument, InvalidConfiguration, ParseError,
                     UnsupportedFormat, V2AError)

log = logging.getLogger("v2a")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
CLI_REGIMES = {"scratch": "scratch", "basic-ft": "basic_ft", "alternating-ft": "alternating_ft",
               "frozen-decoder": "frozen_decoder", "ft-decoder": "ft_decoder"}


class UsageError(Exception):
    pass


def _write_jsonl(path: Path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def _common_run_flags(p):
    p.add_argument("config", help="YAML run configuration")
    p.add_argument("--output-dir", help="where checkpoints, logs and the effective config go")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="torch intra-op threads (default from config, 1)")
    p.add_argument("--max-epochs", type=int, help="override training.max_epochs")
    p.add_argument("--no-deterministic", action="store_true", help="allow nondeterministic kernels")


def _load_run(args, command):
    from .config import load_config

    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    if args.no_deterministic:
        changes["deterministic"] = False
    if args.max_epochs is not None:
        changes["training"] = {**cfg.training, "max_epochs": args.max_epochs}
    cfg = replace(cfg, **changes)
    cfg.train_config()  # re-validate overrides
    if not cfg.data.manifest:
        raise InvalidConfiguration("data.manifest is required")
    from .data import DatasetManifest

    try:
        manifest = DatasetManifest.load(cfg.data.manifest)
    except InvalidArgument as exc:
        raise InvalidConfiguration(str(exc)) from exc
    return cfg, manifest, cfg.resolved_output_dir(command)


def _start(cfg, out_dir):
    from .config import dump_config
    from .training import set_determinism

    set_determinism(cfg.seed, cfg.threads, cfg.deterministic)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "effective_config.yaml")


# ---------------------------------------------------------------- commands


def cmd_pretrain_a2a(args) -> int:
    from .data import load_samples
    from .models import build_model
    from .training import a2a_pretrain, checkpoint_save

    cfg, manifest, out_dir = _load_run(args, "pretrain-a2a")
    if cfg.model.task != "a2a":
        raise InvalidConfiguration(f"pretrain-a2a needs an a2a-* family, got {cfg.model.family}")
    clean = load_samples(manifest, "train", "clean")
    noisy = load_samples(manifest, "train", "noisy")
    val = load_samples(manifest, cfg.data.val_split)
    if not clean or not val:
        raise InvalidConfiguration("manifest needs clean training entries and validation entries")
    _start(cfg, out_dir)
    graph = build_model(replace(cfg.model, seed=cfg.seed))
    result = a2a_pretrain(graph, clean, noisy, val, cfg.train_config("a2a"))
    checkpoint_save(result.best, None, out_dir / "best.ckpt")
    _write_jsonl(out_dir / "metrics.jsonl", result.history)
    print(json.dumps({"best_val": result.best_val, "checkpoint": str(out_dir / "best.ckpt")}))
    return EXIT_OK


def cmd_train_v2a(args) -> int:
    from .data import load_samples
    from .models import build_model
    from .training import (RegimeConfig, a2a_finetune, apply_model_state, checkpoint_load, checkpoint_save,
                           graph_from_checkpoint, regime_preset, v2a_train)

    regime_name = CLI_REGIMES[args.regime]
    if regime_name == "scratch" and args.init_from:
        raise UsageError("--regime scratch contradicts --init-from")
    if regime_name != "scratch" and not args.init_from:
        raise UsageError(f"--regime {args.regime} needs --init-from")
    cfg, manifest, out_dir = _load_run(args, "train-v2a")
    if cfg.model.task != "v2a":
        raise InvalidConfiguration(f"train-v2a needs a v2a-* family, got {cfg.model.family}")
    if args.preset:
        regime = regime_preset(args.preset)
    elif cfg.regime is not None:
        regime = cfg.regime
    else:
        regime = RegimeConfig(regime_name)
    if regime.regime != regime_name:
        raise UsageError(f"--regime {args.regime} conflicts with configured regime {regime.regime}")
    if args.init_from and not Path(args.init_from).is_file():
        raise UsageError(f"checkpoint not found: {args.init_from}")
    train = load_samples(manifest, "train", need_video=True)
    val = load_samples(manifest, cfg.data.val_split, need_video=True)
    if not train or not val:
        raise InvalidConfiguration("manifest needs training and validation entries with video")
    model_cfg = replace(cfg.model, seed=cfg.seed, with_audio_branch=regime.regime == "alternating_ft")
    _start(cfg, out_dir)
    train_cfg = cfg.train_config("v2a")
    init = checkpoint_load(args.init_from) if args.init_from else None
    history = []
    if init is not None and train_cfg.a2a_target_finetune_epochs > 0:
        a2a = graph_from_checkpoint(init)
        tuned = a2a_finetune(a2a, train, val, replace(cfg.train_config("a2a"), seed=cfg.seed),
                             train_cfg.a2a_target_finetune_epochs)
        history += tuned.history
        init = tuned.best
    graph = build_model(model_cfg)
    result = v2a_train(graph, train, val, regime, train_cfg, init=init)
    history += result.history
    checkpoint_save(result.best, None, out_dir / "best.ckpt")
    _write_jsonl(out_dir / "metrics.jsonl", history)
    print(json.dumps({"best_val": result.best_val, "checkpoint": str(out_dir / "best.ckpt")}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_pairs

    for d in (args.generated, args.reference):
        if not Path(d).is_dir():
            raise UsageError(f"not a directory: {d}")
    report = evaluate_pairs(args.generated, args.reference)
    out = Path(args.report) if args.report else Path(args.generated) / "report.jsonl"
    report.write(out)
    agg = report.aggregate()
    print(json.dumps({"aggregate": agg, "warning_status": report.warning_status, "report": str(out)}))
    if not report.records:
        log.error("no matched file pairs")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_dsp(args) -> int:
    from .data import read_wav, write_features

    if not Path(args.input).is_file():
        raise UsageError(f"input not found: {args.input}")
    clip = read_wav(args.input)
    if clip.sample_rate != dsp.SAMPLE_RATE:
        clip = dsp.resample(clip, dsp.SAMPLE_RATE)
    feats = dsp.log_mel_spectrogram(clip).values if args.out == "mel" else dsp.mfcc(clip).values
    write_features(args.path, feats)
    print(json.dumps({"kind": args.out, "rows": int(feats.shape[0]), "cols": int(feats.shape[1]),
                      "path": str(args.path)}))
    return EXIT_OK


def cmd_synth_data(args) -> int:
    from .data import materialize, synthetic_corpus

    if min(args.clips, args.val_clips) < 1 or min(args.noisy_clips, args.test_clips) < 0:
        raise UsageError("need --clips >= 1, --val-clips >= 1 and non-negative other counts")
    out = Path(args.out) if args.out else Path(_output_root()) / "synth-data"
    common = dict(duration_s=args.duration, seed=args.seed, n_speakers=args.speakers,
                  n_sinusoids=args.sinusoids, frame_size=(args.frame_size, args.frame_size),
                  with_frames=not args.audio_only)
    try:
        samples = synthetic_corpus(args.clips, **common)
        samples += synthetic_corpus(args.noisy_clips, noisy=True, **common)
        samples += synthetic_corpus(args.val_clips, split="val", **common)
        samples += synthetic_corpus(args.test_clips, split="test", **common)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from exc
    path = materialize(samples, out)
    print(json.dumps({"manifest": str(path), "entries": len(samples)}))
    return EXIT_OK


def cmd_lr_dump(args) -> int:
    from .training import ScheduleConfig, lr_at

    try:
        sched = ScheduleConfig(args.warmup_epochs, args.eta_max, args.eta_min, args.T0, args.Tmult)
    except InvalidConfiguration as exc:
        raise UsageError(str(exc)) from exc
    if args.epoch_len < 1 or args.epochs < 1:
        raise UsageError("--epoch-len and --epochs must be >= 1")
    rows = []
    for step in range(args.epochs * args.epoch_len):
        rows.append({"step": step, "epoch": step / args.epoch_len, "lr": lr_at(step, args.epoch_len, sched)})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_jsonl(Path(args.out), rows)
    else:
        for r in rows:
            print(json.dumps(r))
    return EXIT_OK


def _output_root():
    import os

    from .config import OUTPUT_ROOT_ENV
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2a", description="Video-to-speech training and evaluation tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain-a2a", help="two-phase A2A pre-training (clean, then clean+noisy)")
    _common_run_flags(p)
    p.set_defaults(func=cmd_pretrain_a2a)

    p = sub.add_parser("train-v2a", help="train a V2A model under a regime")
    _common_run_flags(p)
    p.add_argument("--regime", required=True, choices=sorted(CLI_REGIMES), help="training regime")
    p.add_argument("--init-from", help="pre-trained A2A checkpoint (required unless scratch)")
    p.add_argument("--preset", help="named fine-tuning preset, e.g. grid4-ft-decoder")
    p.set_defaults(func=cmd_train_v2a)

    p = sub.add_parser("eval", help="score generated audio against references")
    p.add_argument("--generated", required=True, help="directory of generated .wav/.v2ax files")
    p.add_argument("--reference", required=True, help="directory of reference files with matching names")
    p.add_argument("--report", help="report path (default <generated>/report.jsonl)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dsp", help="extract log-mel or MFCC features from a wav file")
    p.add_argument("--in", dest="input", required=True, help="input wav")
    p.add_argument("--out", required=True, choices=("mel", "mfcc"), help="feature kind")
    p.add_argument("path", help="output feature file (V2AX layout)")
    p.set_defaults(func=cmd_dsp)

    p = sub.add_parser("synth-data", help="write a seeded synthetic audio/video dataset and manifest")
    p.add_argument("--out", help="output directory (default $V2A_OUTPUT_ROOT/synth-data)")
    p.add_argument("--clips", type=int, default=40, help="clean training clips")
    p.add_argument("--noisy-clips", type=int, default=0, help="noisy training clips")
    p.add_argument("--val-clips", type=int, default=8, help="validation clips")
    p.add_argument("--test-clips", type=int, default=0, help="test clips")
    p.add_argument("--duration", type=float, default=1.0, help="clip length in seconds (multiple of 0.2)")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--speakers", type=int, default=2, help="number of synthetic speakers")
    p.add_argument("--sinusoids", type=int, default=4, help="sinusoids per clip")
    p.add_argument("--frame-size", type=int, default=32, help="square frame size in pixels")
    p.add_argument("--audio-only", action="store_true", help="skip frame tensors")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("lr-dump", help="print the learning-rate schedule per step")
    p.add_argument("--warmup-epochs", type=int, default=1, help="linear warmup length")
    p.add_argument("--eta-max", type=float, default=1e-3, help="peak learning rate")
    p.add_argument("--eta-min", type=float, default=0.0, help="floor learning rate")
    p.add_argument("--T0", type=int, default=4, help="first cycle length in epochs")
    p.add_argument("--Tmult", type=int, default=1, help="cycle length multiplier")
    p.add_argument("--epoch-len", type=int, default=10, help="steps per epoch")
    p.add_argument("--epochs", type=int, default=20, help="epochs to dump")
    p.add_argument("--out", help="write JSON lines here instead of stdout")
    p.set_defaults(func=cmd_lr_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidConfiguration) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (ChecksumFailure, IncompatibleCheckpoint, ParseError, UnsupportedFormat) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except (V2AError, OSError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
