"""Optimizers, schedules, train steps, A2A pre-training, V2A regimes and checkpoints."""

from __future__ import annotations

import copy
import hashlib
import io
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import losses
from .blocks import DualBatchNorm, MODALITIES
from .data import Batch, Sample, collate, epoch_order, horizontal_flip_augment, random_1s_crop
from .errors import ChecksumFailure, IncompatibleCheckpoint, InvalidArgument, InvalidConfiguration
from .models import ModelConfig, ModelGraph, build_model

REGIMES = ("scratch", "basic_ft", "alternating_ft", "frozen_decoder", "ft_decoder")
AUDIO_BRANCH = ("audio_encoder", "a2a_temporal")


# ---------------------------------------------------------------- configs


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise InvalidConfiguration(f"optimizer kind must be adam or adamw, got {self.kind!r}")
        if not self.lr > 0:
            raise InvalidConfiguration("optimizer lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfiguration("betas must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfiguration("weight decay must be non-negative")

    def build(self, groups):
        cls = torch.optim.Adam if self.kind == "adam" else torch.optim.AdamW
        return cls(groups, lr=self.lr, betas=(self.beta1, self.beta2), weight_decay=self.weight_decay)


WAVE_OPTIMIZER = OptimizerConfig("adam", 1e-4, 0.5, 0.99, 0.0)
MEL_OPTIMIZER = OptimizerConfig("adamw", 1e-3, 0.9, 0.98, 1e-2)


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup followed by cosine annealing with warm restarts (epochs)."""

    warmup_epochs: int = 1
    eta_max: float = 1e-3
    eta_min: float = 0.0
    T0: int = 4
    Tmult: int = 1

    def __post_init__(self):
        if self.eta_min > self.eta_max:
            raise InvalidConfiguration("eta_min must not exceed eta_max")
        if self.T0 < 1 or self.Tmult < 1 or self.warmup_epochs < 0:
            raise InvalidConfiguration("need T0 >= 1, Tmult >= 1, warmup_epochs >= 0")


A2A_MEL_SCHEDULE = ScheduleConfig(warmup_epochs=1, eta_max=1e-3, T0=4, Tmult=1)
V2A_MEL_SCHEDULE = ScheduleConfig(warmup_epochs=20, eta_max=1e-3, T0=1, Tmult=2)


def lr_at(step: int, epoch_len: int, schedule: ScheduleConfig) -> float:
    """Learning rate at optimizer step ``step`` (0-based) with ``epoch_len`` steps per epoch."""
    if step < 0:
        raise InvalidArgument("step must be non-negative")
    if epoch_len < 1:
        raise InvalidArgument("epoch_len must be >= 1")
    warmup = schedule.warmup_epochs * epoch_len
    if step < warmup:
        return schedule.eta_max * step / warmup
    t_cur, t_i = step - warmup, schedule.T0 * epoch_len
    if schedule.Tmult == 1:
        t_cur %= t_i
    else:
        while t_cur >= t_i:
            t_cur -= t_i
            t_i *= schedule.Tmult
    cos = math.cos(math.pi * t_cur / t_i)
    return schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) * (1 + cos)


@dataclass(frozen=True)
class RegimeConfig:
    regime: str = "scratch"
    load_decoder_optimizer: bool = False
    load_discriminator_optimizer: bool = False
    audio_encoder_lr: float = 0.0
    decoder_lr: float | None = None  # None: the optimizer's lr
    frozen_epochs: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidConfiguration(f"unknown regime {self.regime!r}; known: {REGIMES}")
        if self.audio_encoder_lr < 0 or (self.decoder_lr is not None and self.decoder_lr < 0):
            raise InvalidConfiguration("learning rates must be non-negative")
        if self.frozen_epochs < 0:
            raise InvalidConfiguration("frozen_epochs must be non-negative")

    @property
    def needs_init(self):
        return self.regime != "scratch"


def _wave_basic(load):
    return RegimeConfig("basic_ft", load_decoder_optimizer=load, load_discriminator_optimizer=load)


def _wave_alt(lr):
    return RegimeConfig("alternating_ft", audio_encoder_lr=lr)


def _ft_decoder(frozen, load, lr):
    return RegimeConfig("ft_decoder", load_decoder_optimizer=load, decoder_lr=lr, frozen_epochs=frozen)


# Fine-tuning configurations per dataset; F/SP = face/speaker identity.
REGIME_PRESETS = {
    "grid4-basic": _wave_basic(False),
    "grid4-alternating": _wave_alt(0.0),
    "grid33-seen-basic": _wave_basic(True),
    "grid33-seen-alternating": _wave_alt(1e-4),
    "grid33-unseen-basic": _wave_basic(False),
    "grid33-unseen-alternating-f": _wave_alt(1e-4),
    "grid33-unseen-alternating-sp": _wave_alt(0.0),
    "tcd-basic": _wave_basic(False),
    "tcd-alternating-f": _wave_alt(0.0),
    "tcd-alternating-sp": _wave_alt(1e-4),
    "lrw-basic": _wave_basic(True),
    "lrw-alternating-f": _wave_alt(1e-4),
    "lrw-alternating-sp": _wave_alt(0.0),
    "frozen-decoder": RegimeConfig("frozen_decoder"),
    "grid4-ft-decoder": _ft_decoder(20, False, 1e-4),
    "grid33-seen-ft-decoder-f": _ft_decoder(20, False, 1e-4),
    "grid33-seen-ft-decoder-sp": _ft_decoder(20, True, 1e-4),
    "grid33-unseen-ft-decoder": _ft_decoder(0, False, 1e-5),
    "tcd-ft-decoder": _ft_decoder(20, False, 1e-7),
    "lrw-ft-decoder": _ft_decoder(0, True, 1e-5),
}


def regime_preset(name: str) -> RegimeConfig:
    try:
        return REGIME_PRESETS[name]
    except KeyError:
        raise InvalidConfiguration(f"unknown regime preset {name!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerConfig = WAVE_OPTIMIZER
    schedule: ScheduleConfig | None = None  # None: constant lr
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 5
    max_seconds: float = 3.0
    loss_preset: str = "default"
    flip_probability: float = 0.5
    grad_clip: float | None = None
    seed: int = 0
    a2a_target_finetune_epochs: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise InvalidConfiguration("batch_size, max_epochs and patience must be >= 1")
        if self.max_seconds <= 0:
            raise InvalidConfiguration("max_seconds must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise InvalidConfiguration("grad_clip must be positive when set")
        losses.loss_weights(self.loss_preset)

    @property
    def weights(self):
        return losses.loss_weights(self.loss_preset)


def default_train_config(graph_or_cfg, task: str | None = None, **changes) -> TrainConfig:
    """Optimizer and schedule defaults per model domain and task."""
    cfg = graph_or_cfg.config if isinstance(graph_or_cfg, ModelGraph) else graph_or_cfg
    task = task or cfg.task
    if cfg.domain == "wave":
        base = TrainConfig(WAVE_OPTIMIZER, None)
    elif task == "a2a":
        base = TrainConfig(MEL_OPTIMIZER, A2A_MEL_SCHEDULE)
    else:
        base = TrainConfig(MEL_OPTIMIZER, V2A_MEL_SCHEDULE)
    return replace(base, **changes)


# ---------------------------------------------------------------- optimizer state by name


def _param_names(graph: torch.nn.Module) -> dict[int, str]:
    return {id(p): name for name, p in graph.named_parameters()}


def optimizer_state_by_name(optimizer, names: dict[int, str]) -> dict[str, dict]:
    out = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if state:
                out[names[id(p)]] = {k: (v.detach().clone() if torch.is_tensor(v) else v)
                                     for k, v in state.items()}
    return out


def load_optimizer_state_by_name(optimizer, graph, state: dict[str, dict], prefixes: Sequence[str] = ("",)):
    """Copy per-parameter optimizer state for parameters whose name starts with a prefix."""
    params = dict(graph.named_parameters())
    todo = []
    for name, st in state.items():
        if not any(name.startswith(p) for p in prefixes):
            continue
        if name not in params:
            raise IncompatibleCheckpoint(f"optimizer state for unknown parameter {name}")
        p = params[name]
        for k, v in st.items():
            if torch.is_tensor(v) and v.dim() > 0 and v.shape != p.shape:
                raise IncompatibleCheckpoint(f"optimizer state {name}.{k}: {tuple(v.shape)} vs {tuple(p.shape)}")
        todo.append((p, st))
    owned = {id(p) for g in optimizer.param_groups for p in g["params"]}
    for p, st in todo:
        if id(p) in owned:
            optimizer.state[p] = {k: (v.clone() if torch.is_tensor(v) else v) for k, v in st.items()}


# ---------------------------------------------------------------- trainer


class Trainer:
    """Owns the optimizers of a graph and per-role learning rates.

    ``role_lrs`` holds absolute learning rates at the schedule peak; a role at
    lr 0 is excluded from updates. ``on_update(roles, path)`` fires after every
    optimizer step with the roles actually updated.
    """

    def __init__(self, graph: ModelGraph, cfg: TrainConfig, epoch_len: int = 1,
                 role_lrs: dict[str, float] | None = None):
        self.graph, self.cfg = graph, cfg
        self.epoch_len = max(1, epoch_len)
        self.step = 0
        self.role_lrs = {role: cfg.optimizer.lr for role in graph.roles()}
        self.role_lrs.update(role_lrs or {})
        self.update_counts = {role: 0 for role in graph.roles()}
        self.on_update: Callable | None = None
        self.names = _param_names(graph)
        gen_groups = [{"params": list(m.parameters()), "role": r, "lr": self.role_lrs[r]}
                      for r, m in graph.roles().items() if r != "discriminator" and len(list(m.parameters()))]
        self.gen_opt = cfg.optimizer.build(gen_groups)
        self.disc_opt = None
        if hasattr(graph, "discriminator"):
            self.disc_opt = cfg.optimizer.build([{"params": list(graph.discriminator.parameters()),
                                                  "role": "discriminator", "lr": self.role_lrs["discriminator"]}])
        self.crop_rng = np.random.default_rng([cfg.seed, 1])
        self.flip_rng = np.random.default_rng([cfg.seed, 2])

    # learning rates
    def schedule_factor(self) -> float:
        s = self.cfg.schedule
        if s is None:
            return 1.0
        return lr_at(self.step, self.epoch_len, s) / s.eta_max

    def role_lr(self, role):
        return self.role_lrs.get(role, 0.0) * self.schedule_factor()

    def set_role_lr(self, role, lr):
        self.role_lrs[role] = lr

    def _apply_lrs(self):
        for opt in filter(None, (self.gen_opt, self.disc_opt)):
            for g in opt.param_groups:
                g["lr"] = self.role_lr(g["role"])

    def reset_schedule(self):
        self.step = 0

    # modes
    def prepare(self, path: str):
        """Train mode everywhere except frozen audio-branch modules."""
        self.graph.train()
        for role in AUDIO_BRANCH:
            if hasattr(self.graph, role) and self.role_lrs.get(role, 0.0) == 0.0:
                getattr(self.graph, role).eval()

    def _step(self, opt, loss, path):
        opt.zero_grad(set_to_none=True)
        loss.backward()
        self._apply_lrs()
        updated = []
        for g in opt.param_groups:
            has_grad = any(p.grad is not None for p in g["params"])
            if g["lr"] == 0.0 or not has_grad:
                for p in g["params"]:
                    p.grad = None
            else:
                updated.append(g["role"])
        if self.cfg.grad_clip is not None:
            params = [p for g in opt.param_groups for p in g["params"] if p.grad is not None]
            torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_clip)
        if updated:
            opt.step()
        for role in updated:
            self.update_counts[role] += 1
        if self.on_update is not None:
            self.on_update(tuple(updated), path)
        return updated

    # checkpoint helpers
    def optimizer_state(self):
        state = {"generator": optimizer_state_by_name(self.gen_opt, self.names)}
        if self.disc_opt is not None:
            state["discriminator"] = optimizer_state_by_name(self.disc_opt, self.names)
        return state

    def load_optimizer_state(self, state: dict, prefixes=("",)):
        load_optimizer_state_by_name(self.gen_opt, self.graph, state.get("generator", {}), prefixes)
        if self.disc_opt is not None:
            load_optimizer_state_by_name(self.disc_opt, self.graph, state.get("discriminator", {}), prefixes)


# ---------------------------------------------------------------- train steps


def _generate(graph: ModelGraph, batch: Batch, path: str):
    if path == "video":
        if batch.frames is None:
            raise InvalidArgument("video pass needs frames in the batch")
        return graph.generate_from_video(batch.frames, batch.identity)
    if graph.is_wave:
        return graph.generate_from_audio(batch.audio)
    if batch.mel is None:
        raise InvalidArgument("mel audio pass needs mel targets in the batch")
    return graph.generate_from_audio(batch.mel)


def _masked(audio, mask):
    return audio * mask.to(audio.dtype)


def wave_generator_losses(real, fake, weights, adv=None):
    mr = losses.multi_resolution_stft_loss(real, fake)
    mf = losses.mfcc_loss(real, fake)
    adv_t = adv if adv is not None else torch.zeros((), dtype=fake.dtype)
    total = losses.wavegan_generator_total(adv_t, mr, mf, weights)
    return total, mr, mf


def gan_train_step(trainer: Trainer, batch: Batch, path: str = "video") -> dict:
    """One discriminator update then one generator update on ``batch``."""
    graph, cfg = trainer.graph, trainer.cfg
    if trainer.disc_opt is None:
        raise InvalidConfiguration("GAN step needs a discriminator")
    trainer.prepare(path)
    real = batch.audio
    fake = _masked(_generate(graph, batch, path), batch.audio_mask)
    if fake.shape != real.shape:
        raise InvalidArgument(f"generated {tuple(fake.shape)} vs target {tuple(real.shape)}")
    lengths = batch.audio_lengths.tolist()
    state = trainer.crop_rng.bit_generator.state
    real_c, fake_c = random_1s_crop(real, fake.detach(), trainer.crop_rng, lengths)
    d_loss = losses.lsgan_discriminator_loss(graph.discriminator(real_c), graph.discriminator(fake_c))
    trainer._step(trainer.disc_opt, d_loss, path)
    # generator sees the same windows
    trainer.crop_rng.bit_generator.state = state
    _, fake_g = random_1s_crop(real, fake, trainer.crop_rng, lengths)
    adv = losses.lsgan_generator_loss(graph.discriminator(fake_g))
    total, mr, mf = wave_generator_losses(real, fake, cfg.weights, adv)
    updated = trainer._step(trainer.gen_opt, total, path)
    trainer.step += 1
    return {"path": path, "loss": float(total.detach()), "d_loss": float(d_loss.detach()), "adv": float(adv.detach()),
            "mr_stft": float(mr.detach()), "mfcc": float(mf.detach()), "updated": list(updated)}


def melspec_train_step(trainer: Trainer, batch: Batch, path: str = "video") -> dict:
    trainer.prepare(path)
    pred = _generate(trainer.graph, batch, path)
    if pred.shape != batch.mel.shape:
        raise InvalidArgument(f"predicted mel {tuple(pred.shape)} vs target {tuple(batch.mel.shape)}")
    loss = losses.mel_l1_loss(batch.mel, pred, batch.mel_mask)
    updated = trainer._step(trainer.gen_opt, loss, path)
    trainer.step += 1
    return {"path": path, "loss": float(loss.detach()), "updated": list(updated)}


def train_step(trainer: Trainer, batch: Batch, path: str) -> dict:
    if trainer.graph.is_wave:
        return gan_train_step(trainer, batch, path)
    return melspec_train_step(trainer, batch, path)


@torch.no_grad()
def validation_loss(graph: ModelGraph, samples: Sequence[Sample], path: str, cfg: TrainConfig) -> float:
    """Mean validation loss: mel L1 (mel models) or weighted spectral+MFCC loss (waveform)."""
    if len(samples) == 0:
        raise InvalidArgument("empty validation set")
    was_training = graph.training
    graph.eval()
    total, count = 0.0, 0
    try:
        for start in range(0, len(samples), cfg.batch_size):
            batch = _collate(graph, samples[start:start + cfg.batch_size], cfg, path)
            pred = _generate(graph, batch, path)
            if graph.is_wave:
                loss, _, _ = wave_generator_losses(batch.audio, _masked(pred, batch.audio_mask), cfg.weights)
            else:
                loss = losses.mel_l1_loss(batch.mel, pred, batch.mel_mask)
            total += float(loss) * batch.size
            count += batch.size
    finally:
        graph.train(was_training)
    return total / count


def _collate(graph, samples, cfg, path):
    kind = graph.config.identity if path == "video" else "none"
    return collate(samples, cfg.max_seconds, identity_kind=kind, with_mel=not graph.is_wave,
                   with_frames=path == "video")


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"V2ACKPT\x01"


@dataclass
class CheckpointBundle:
    model_config: dict
    model_state: dict
    optimizer_state: dict = field(default_factory=dict)
    schedule_step: int = 0
    seed: int = 0
    rng_state: torch.Tensor | None = None
    meta: dict = field(default_factory=dict)

    def to_payload(self):
        return {"model_config": self.model_config, "model_state": self.model_state,
                "optimizer_state": self.optimizer_state, "schedule_step": self.schedule_step,
                "seed": self.seed, "rng_state": self.rng_state, "meta": self.meta}


def snapshot(graph: ModelGraph, trainer: Trainer | None = None, **meta) -> CheckpointBundle:
    return CheckpointBundle(
        model_config=asdict(graph.config),
        model_state={k: v.detach().clone() for k, v in graph.state_dict().items()},
        optimizer_state=trainer.optimizer_state() if trainer else {},
        schedule_step=trainer.step if trainer else 0,
        seed=trainer.cfg.seed if trainer else graph.config.seed,
        rng_state=torch.get_rng_state(),
        meta=dict(meta),
    )


def checkpoint_save(graph: ModelGraph | CheckpointBundle, trainer: Trainer | None, path, **meta) -> Path:
    bundle = graph if isinstance(graph, CheckpointBundle) else snapshot(graph, trainer, **meta)
    buf = io.BytesIO()
    torch.save(bundle.to_payload(), buf)
    payload = buf.getvalue()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(CHECKPOINT_MAGIC + hashlib.sha256(payload).digest() + payload)
    os.replace(tmp, path)
    return path


def checkpoint_load(path) -> CheckpointBundle:
    raw = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 32
    if len(raw) < head or raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ChecksumFailure(f"{path}: not a checkpoint or truncated header")
    digest, payload = raw[len(CHECKPOINT_MAGIC):head], raw[head:]
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumFailure(f"{path}: checksum mismatch")
    data = torch.load(io.BytesIO(payload), weights_only=True)
    return CheckpointBundle(**data)


def apply_model_state(graph: ModelGraph, state: dict, roles: Sequence[str] | None = None):
    """Copy tensors by name; with ``roles``, only those subtrees. Validates before mutating."""
    target = graph.state_dict()
    prefixes = tuple(f"{r}." for r in roles) if roles else ("",)
    wanted = [k for k in target if k.startswith(prefixes)]
    missing = [k for k in wanted if k not in state]
    if missing:
        raise IncompatibleCheckpoint(f"checkpoint lacks {len(missing)} tensors, e.g. {missing[:3]}")
    if roles is None:
        extra = [k for k in state if k not in target]
        if extra:
            raise IncompatibleCheckpoint(f"checkpoint has unknown tensors, e.g. {extra[:3]}")
    for k in wanted:
        if state[k].shape != target[k].shape:
            raise IncompatibleCheckpoint(f"{k}: {tuple(state[k].shape)} vs {tuple(target[k].shape)}")
    with torch.no_grad():
        for k in wanted:
            target[k].copy_(state[k])


def graph_from_checkpoint(bundle: CheckpointBundle) -> ModelGraph:
    graph = build_model(ModelConfig(**bundle.model_config))
    apply_model_state(graph, bundle.model_state)
    return graph


# ---------------------------------------------------------------- loops


@dataclass
class RunResult:
    best: CheckpointBundle
    best_val: float
    history: list
    steps_to: list = field(default_factory=list)  # (step, val_loss) at each evaluation


def _epoch_batches(graph, samples, cfg, epoch, path, trainer):
    order = epoch_order(len(samples), cfg.seed, epoch)
    for start in range(0, len(order), cfg.batch_size):
        batch = _collate(graph, [samples[i] for i in order[start:start + cfg.batch_size]], cfg, path)
        if batch.frames is not None and cfg.flip_probability > 0:
            batch.frames = torch.stack([horizontal_flip_augment(f, cfg.flip_probability, trainer.flip_rng)
                                        for f in batch.frames])
        yield batch


def n_batches(n_samples, batch_size):
    return -(-n_samples // batch_size)


def fit(trainer: Trainer, train: Sequence[Sample], val: Sequence[Sample], paths: Sequence[str],
        val_path: str, max_epochs: int | None = None, epoch_hook: Callable | None = None,
        history: list | None = None, phase: str = "", max_steps: int | None = None,
        stop_below: float | None = None) -> RunResult:
    """Epoch loop with patience-based early stopping on validation loss.

    Each batch runs one train step per entry of ``paths`` in order (two
    entries give the alternating scheme). Returns the best-validation snapshot.
    """
    if len(train) == 0:
        raise InvalidArgument("empty training set")
    graph, cfg = trainer.graph, trainer.cfg
    history = history if history is not None else []
    best, best_val, stale, evals = None, math.inf, 0, []
    epochs = max_epochs if max_epochs is not None else cfg.max_epochs
    epoch_path = paths[0]
    for epoch in range(epochs):
        if epoch_hook is not None:
            epoch_hook(trainer, epoch)
        for batch in _epoch_batches(graph, train, cfg, epoch, epoch_path, trainer):
            for path in paths:
                report = train_step(trainer, batch, path)
                report.update(event="train", phase=phase, epoch=epoch, step=trainer.step)
                history.append(report)
            if max_steps is not None and trainer.step >= max_steps:
                break
        val_loss = validation_loss(graph, val, val_path, cfg)
        history.append({"event": "val", "phase": phase, "epoch": epoch, "step": trainer.step, "loss": val_loss})
        evals.append((trainer.step, val_loss))
        if val_loss < best_val:
            best_val, stale = val_loss, 0
            best = snapshot(graph, trainer, phase=phase, epoch=epoch, val_loss=val_loss)
        else:
            stale += 1
        if stale >= cfg.patience:
            break
        if max_steps is not None and trainer.step >= max_steps:
            break
        if stop_below is not None and val_loss < stop_below:
            break
    return RunResult(best, best_val, history, evals)


def _restore(trainer: Trainer, bundle: CheckpointBundle):
    apply_model_state(trainer.graph, bundle.model_state)
    trainer.load_optimizer_state(bundle.optimizer_state)


def a2a_pretrain(graph: ModelGraph, clean: Sequence[Sample], noisy: Sequence[Sample], val: Sequence[Sample],
                 cfg: TrainConfig, max_epochs_per_phase: int | None = None, **fit_kwargs) -> RunResult:
    """Two-phase A2A pre-training: clean group, then clean plus noisy from the best model.

    With a schedule, phase 2 restarts from warmup while model and optimizer
    state carry over. Returns the best-validation checkpoint over both phases.
    """
    if len(clean) == 0:
        raise InvalidArgument("clean dataset group is empty")
    if not graph.has_audio_branch():
        raise InvalidConfiguration("A2A pre-training needs an audio encoder and temporal module")
    torch.manual_seed(cfg.seed)
    trainer = Trainer(graph, cfg, n_batches(len(clean), cfg.batch_size))
    history: list = []
    first = fit(trainer, clean, val, ["audio"], "audio", max_epochs_per_phase, history=history,
                phase="clean", **fit_kwargs)
    _restore(trainer, first.best)
    combined = list(clean) + list(noisy)
    trainer.epoch_len = n_batches(len(combined), cfg.batch_size)
    trainer.reset_schedule()
    history.append({"event": "phase", "phase": "all", "lr": trainer.role_lr("decoder")})
    second = fit(trainer, combined, val, ["audio"], "audio", max_epochs_per_phase, history=history,
                 phase="all", **fit_kwargs)
    winner = second if second.best_val < first.best_val else first
    return RunResult(winner.best, winner.best_val, history, first.steps_to + second.steps_to)


def reset_video_stats(module: torch.nn.Module):
    for m in module.modules():
        if isinstance(m, DualBatchNorm):
            m.reset_stats("video")


def init_from_pretrained(graph: ModelGraph, bundle: CheckpointBundle, regime: RegimeConfig,
                         trainer: Trainer | None = None) -> ModelGraph:
    """Transplant pre-trained A2A subtrees into a V2A graph for ``regime``.

    The decoder is always copied; its video BN statistics restart at (0, 1)
    while audio statistics come from the checkpoint. Waveform basic and
    alternating fine-tuning also take the discriminator; alternating takes the
    audio encoder and temporal module too.
    """
    roles = ["decoder"]
    if graph.is_wave and regime.regime in ("basic_ft", "alternating_ft"):
        roles.append("discriminator")
    if regime.regime == "alternating_ft":
        if not graph.has_audio_branch():
            raise InvalidConfiguration("alternating fine-tuning needs a graph built with_audio_branch")
        roles += list(AUDIO_BRANCH)
    apply_model_state(graph, bundle.model_state, roles)
    reset_video_stats(graph.decoder)
    if trainer is not None:
        prefixes = []
        if regime.load_decoder_optimizer:
            prefixes.append("decoder.")
        if regime.load_discriminator_optimizer:
            prefixes.append("discriminator.")
        if prefixes:
            trainer.load_optimizer_state(bundle.optimizer_state, tuple(prefixes))
    return graph


def regime_role_lrs(graph: ModelGraph, regime: RegimeConfig, cfg: TrainConfig, epoch: int = 0) -> dict:
    lrs = {role: cfg.optimizer.lr for role in graph.roles()}
    if regime.regime == "frozen_decoder":
        lrs["decoder"] = 0.0
    elif regime.regime == "ft_decoder":
        lrs["decoder"] = 0.0 if epoch < regime.frozen_epochs else (
            regime.decoder_lr if regime.decoder_lr is not None else cfg.optimizer.lr)
    elif regime.decoder_lr is not None:
        lrs["decoder"] = regime.decoder_lr
    for role in AUDIO_BRANCH:
        if role in lrs:
            lrs[role] = regime.audio_encoder_lr if regime.regime == "alternating_ft" else 0.0
    return lrs


def v2a_train(graph: ModelGraph, train: Sequence[Sample], val: Sequence[Sample], regime: RegimeConfig,
              cfg: TrainConfig, init: CheckpointBundle | None = None, trainer_hook: Callable | None = None,
              **fit_kwargs) -> RunResult:
    """Train a V2A graph under one of the five regimes."""
    if graph.config.task != "v2a":
        raise InvalidConfiguration("v2a_train needs a V2A graph")
    if regime.needs_init and init is None:
        raise InvalidConfiguration(f"regime {regime.regime} needs a pre-trained checkpoint")
    if regime.regime == "scratch" and init is not None:
        raise InvalidConfiguration("scratch training does not take a pre-trained checkpoint")
    if regime.regime == "alternating_ft" and not graph.has_audio_branch():
        raise InvalidConfiguration("alternating fine-tuning needs A2A modules in the graph")
    torch.manual_seed(cfg.seed)
    trainer = Trainer(graph, cfg, n_batches(len(train), cfg.batch_size), regime_role_lrs(graph, regime, cfg))
    if init is not None:
        init_from_pretrained(graph, init, regime, trainer)
    if trainer_hook is not None:
        trainer_hook(trainer)

    def epoch_hook(tr, epoch):
        for role, lr in regime_role_lrs(graph, regime, cfg, epoch).items():
            tr.set_role_lr(role, lr)

    paths = ["video", "audio"] if regime.regime == "alternating_ft" else ["video"]
    return fit(trainer, train, val, paths, "video", epoch_hook=epoch_hook, phase=regime.regime, **fit_kwargs)


def a2a_finetune(graph: ModelGraph, samples: Sequence[Sample], val: Sequence[Sample], cfg: TrainConfig,
                 epochs: int) -> RunResult:
    """Optional A2A pass on the target dataset's audio before V2A initialization."""
    torch.manual_seed(cfg.seed)
    trainer = Trainer(graph, cfg, n_batches(len(samples), cfg.batch_size))
    return fit(trainer, samples, val, ["audio"], "audio", max_epochs=epochs, phase="target-a2a")


# ---------------------------------------------------------------- determinism


def set_determinism(seed: int, threads: int = 1, deterministic: bool = True):
    torch.manual_seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.set_num_threads(max(1, threads))
    torch.use_deterministic_algorithms(deterministic)
