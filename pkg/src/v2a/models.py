"""Generators, discriminator and encoders assembled from :mod:`v2a.blocks`.

Parameter names follow ``role.<layer path>.<kind>`` where ``role`` is one of
``video_encoder`` (E_V), ``identity`` (E_I, learned face projection only),
``v2a_temporal`` (T_V), ``audio_encoder`` (E_A), ``a2a_temporal`` (T_A),
``decoder`` (F_V / F_A) and ``discriminator`` (D_V). The decoder subtree is
built identically for A2A and V2A graphs of one family, so checkpoints move
between them by name.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import dsp
from .blocks import (LRELU_SLOPE, PRELU_INIT, BiLSTM, ConformerBlock, ConformerConfig, DualBatchNorm,
                     ReflectionPad1d, ResidualStack1d, ResidualStack2d, WeightNormConv1d, batch_norm_1d, modality,
                     nn_time_upsample, scaled, time_downsample)
from .errors import InvalidArgument

VIDEO_FPS = 25
SAMPLES_PER_FRAME = dsp.SAMPLE_RATE // VIDEO_FPS  # 960
WAVE_UP_STRIDES = (5, 4, 4, 4, 3)
MEL_DECODER_BLOCKS = {"vs": 2, "s": 6, "m": 12}
MEL_CODE_DIM = 64  # mel audio-encoder output size
IDENTITY_DIMS = {"speaker256": 256, "face4096": 4096, "none": 0}
FAMILIES = ("v2a-wave", "a2a-wave") + tuple(
    f"{task}-mel-{size}" for task in ("v2a", "a2a") for size in MEL_DECODER_BLOCKS)
ROLES = ("video_encoder", "identity", "v2a_temporal", "audio_encoder", "a2a_temporal",
         "decoder", "discriminator")


# ---------------------------------------------------------------- identity


@dataclass(frozen=True)
class IdentityEmbedding:
    vector: np.ndarray
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in IDENTITY_DIMS:
            raise InvalidArgument(f"unknown identity kind {self.kind!r}")
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if vec.shape[0] != IDENTITY_DIMS[self.kind]:
            raise InvalidArgument(f"{self.kind} embedding needs {IDENTITY_DIMS[self.kind]} values, got {vec.shape[0]}")
        object.__setattr__(self, "vector", vec)


def _id_seed(kind: str, key: str) -> int:
    digest = hashlib.sha256(f"{kind}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def pseudo_embedding(kind: str, key) -> IdentityEmbedding:
    """Deterministic stand-in for a pre-trained identity encoder, keyed by speaker."""
    if kind == "none":
        return IdentityEmbedding(np.zeros(0, np.float32), "none")
    rng = np.random.default_rng(_id_seed(kind, str(key)))
    vec = rng.standard_normal(IDENTITY_DIMS[kind])
    if kind == "speaker256":
        vec /= np.linalg.norm(vec)  # d-vectors are unit length
    else:
        vec = np.maximum(vec, 0.0)  # post-ReLU penultimate activations
    return IdentityEmbedding(vec.astype(np.float32), kind)


def load_embedding(path, kind: str) -> IdentityEmbedding:
    return IdentityEmbedding(np.load(Path(path)).astype(np.float32), kind)


class IdentityConcat(nn.Module):
    """Concatenates an identity embedding onto every visual timestep."""

    def __init__(self, kind: str, visual_dim: int, width: float = 1.0):
        super().__init__()
        if kind not in IDENTITY_DIMS:
            raise InvalidArgument(f"unknown identity kind {kind!r}")
        self.kind = kind
        self.visual_dim = visual_dim
        if kind == "face4096":
            self.projection = nn.Sequential(
                nn.Linear(4096, scaled(1024, width)),
                nn.PReLU(scaled(1024, width), init=PRELU_INIT),
                nn.Linear(scaled(1024, width), scaled(512, width)),
            )
            self.id_dim = scaled(512, width)
        else:
            self.projection = None
            self.id_dim = IDENTITY_DIMS[kind]

    @property
    def output_dim(self):
        return self.visual_dim + self.id_dim

    def forward(self, visual: torch.Tensor, identity) -> torch.Tensor:
        if isinstance(identity, IdentityEmbedding):
            if identity.kind != self.kind:
                raise InvalidArgument(f"model expects {self.kind} identity, got {identity.kind}")
            identity = torch.as_tensor(identity.vector)
        if self.kind == "none":
            if identity is not None and identity.numel() > 0:
                raise InvalidArgument("model was built without identity input")
            return visual
        if identity is None:
            raise InvalidArgument(f"model expects a {self.kind} identity embedding")
        identity = identity.to(visual.dtype)
        if identity.dim() == 1:
            identity = identity.unsqueeze(0).expand(visual.shape[0], -1)
        if identity.shape[-1] != IDENTITY_DIMS[self.kind]:
            raise InvalidArgument(f"{self.kind} embedding must have {IDENTITY_DIMS[self.kind]} values")
        if self.projection is not None:
            identity = self.projection(identity)
        tiled = identity.unsqueeze(1).expand(-1, visual.shape[1], -1)
        return torch.cat([visual, tiled], dim=-1)


# ---------------------------------------------------------------- video


class VideoFramesEncoder(nn.Module):
    """3-D conv stem plus ResNet-18 trunk; one feature vector per frame."""

    def __init__(self, width: float = 1.0, in_channels: int = 3):
        super().__init__()
        c = [scaled(ch, width) for ch in (64, 128, 256, 512)]
        self.stem = nn.Sequential(
            nn.Conv3d(in_channels, c[0], (5, 7, 7), (1, 2, 2), (2, 3, 3), bias=False),
            nn.BatchNorm3d(c[0]),
            nn.PReLU(c[0], init=PRELU_INIT),
            nn.MaxPool3d((1, 3, 3), (1, 2, 2), (0, 1, 1)),
        )
        layers = []
        for i in range(4):
            layers += [ResidualStack2d(c[0], c[0]), nn.PReLU(c[0], init=PRELU_INIT)]
        for prev, ch in zip(c[:-1], c[1:]):
            layers += [ResidualStack2d(prev, ch, 2, downsample=True), nn.PReLU(ch, init=PRELU_INIT)]
            for _ in range(3):
                layers += [ResidualStack2d(ch, ch), nn.PReLU(ch, init=PRELU_INIT)]
        self.trunk = nn.Sequential(*layers)
        self.output_dim = c[-1]

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """``[B, N, C, H, W]`` frames to ``[B, N, D]`` features."""
        if frames.dim() == 4:
            frames = frames.unsqueeze(0)
        b, n = frames.shape[:2]
        if n < 1:
            raise InvalidArgument("need at least one video frame")
        h = self.stem(frames.transpose(1, 2))  # [B, C, N, H', W']
        c, height, width = h.shape[1], h.shape[3], h.shape[4]
        h = h.transpose(1, 2).reshape(b * n, c, height, width)
        h = self.trunk(h)
        return F.adaptive_avg_pool2d(h, 1).reshape(b, n, -1)


# ---------------------------------------------------------------- waveform


class WaveDecoder(nn.Module):
    """Features at 25 Hz ``[B, N, D]`` to waveform ``[B, 960 N]`` in [-1, 1]."""

    def __init__(self, in_dim: int, width: float = 1.0):
        super().__init__()
        c = [scaled(ch, width) for ch in (2048, 1024, 512, 256, 128, 64)]
        layers = [
            ReflectionPad1d(3),
            nn.Conv1d(in_dim, c[0], 7),
            DualBatchNorm(c[0]),
            nn.LeakyReLU(LRELU_SLOPE),
        ]
        specs = [(10, 5, 3, 1), (8, 4, 2, 0), (8, 4, 2, 0), (8, 4, 2, 0), (6, 3, 2, 1)]
        for i, (kernel, stride, pad, out_pad) in enumerate(specs):
            if i:
                layers.append(nn.LeakyReLU(LRELU_SLOPE))
            layers += [
                nn.ConvTranspose1d(c[i], c[i + 1], kernel, stride, pad, output_padding=out_pad),
                DualBatchNorm(c[i + 1]),
                ResidualStack1d(c[i + 1], 1, dual_bn=True),
                ResidualStack1d(c[i + 1], 3, dual_bn=True),
            ]
        layers += [nn.LeakyReLU(LRELU_SLOPE), ReflectionPad1d(3), nn.Conv1d(c[-1], 1, 7), nn.Tanh()]
        self.layers = nn.Sequential(*layers)
        self.in_dim = in_dim

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() == 2:
            z = z.unsqueeze(0)
        if z.shape[-1] != self.in_dim:
            raise InvalidArgument(f"decoder expects {self.in_dim}-D features, got {z.shape[-1]}")
        return self.layers(z.transpose(1, 2)).squeeze(1)


class WaveAudioEncoder(nn.Module):
    """Waveform ``[B, 960 N]`` to ``[B, N, D]`` features bounded by tanh."""

    def __init__(self, out_dim: int, width: float = 1.0):
        super().__init__()
        c = [scaled(ch, width) for ch in (32, 64, 128, 256, 512, 1024)]
        layers = [
            nn.ConvTranspose1d(1, c[0], 7, 1, 3),
            nn.BatchNorm1d(c[0]),
            ResidualStack1d(c[0], 1),
        ]
        specs = [(6, 3, 2), (8, 4, 2), (8, 4, 2), (8, 4, 2), (10, 5, 3)]
        for i, (kernel, stride, pad) in enumerate(specs):
            layers += [nn.LeakyReLU(LRELU_SLOPE), nn.Conv1d(c[i], c[i + 1], kernel, stride, pad),
                       nn.BatchNorm1d(c[i + 1])]
            if i < len(specs) - 1:
                layers.append(ResidualStack1d(c[i + 1], 1))
        layers += [nn.LeakyReLU(LRELU_SLOPE), nn.ConvTranspose1d(c[-1], out_dim, 7, 1, 3), nn.Tanh()]
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 1:
            x = x.unsqueeze(0)
        if x.shape[-1] < 1:
            raise InvalidArgument("empty audio")
        x = pad_to_frames(x)
        return self.layers(x.unsqueeze(1)).transpose(1, 2)


def pad_to_frames(x: torch.Tensor) -> torch.Tensor:
    """Right-pad the last axis with zeros to a multiple of 960 samples."""
    extra = (-x.shape[-1]) % SAMPLES_PER_FRAME
    return F.pad(x, (0, extra)) if extra else x


class WaveTemporal(nn.Module):
    """V2A waveform temporal module: 2-layer BiLSTM to the decoder width."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.rnn = BiLSTM(in_dim, out_dim // 2, layers=2)

    def forward(self, z):
        return self.rnn(z)


class A2AWaveTemporal(nn.Module):
    """Channel bottleneck: 2-layer BiLSTM down to half width, then back up."""

    def __init__(self, dim):
        super().__init__()
        self.down = BiLSTM(dim, dim // 4, layers=2)
        self.up = BiLSTM(2 * (dim // 4), dim // 2, layers=2)
        self.bottleneck_dim = 2 * (dim // 4)

    def forward(self, z):
        return self.up(self.down(z))


class ScaleDiscriminator(nn.Module):
    def __init__(self, width: float = 1.0):
        super().__init__()
        c = [scaled(ch, width) for ch in (16, 64, 256, 512)]
        self.groups = tuple(_fit_groups(scaled(g, width), cin, cout)
                            for g, cin, cout in ((4, c[0], c[1]), (16, c[1], c[2]), (64, c[2], c[3])))
        self.layers = nn.ModuleList([
            nn.Sequential(ReflectionPad1d(7), WeightNormConv1d(1, c[0], 15), nn.LeakyReLU(LRELU_SLOPE)),
            nn.Sequential(WeightNormConv1d(c[0], c[1], 41, 4, 20, self.groups[0]), nn.LeakyReLU(LRELU_SLOPE)),
            nn.Sequential(WeightNormConv1d(c[1], c[2], 41, 4, 20, self.groups[1]), nn.LeakyReLU(LRELU_SLOPE)),
            nn.Sequential(WeightNormConv1d(c[2], c[3], 41, 4, 20, self.groups[2]), nn.LeakyReLU(LRELU_SLOPE)),
            nn.Sequential(WeightNormConv1d(c[3], c[3], 5, 1, 2), nn.LeakyReLU(LRELU_SLOPE)),
            WeightNormConv1d(c[3], 1, 3, 1, 1),
        ])

    def forward(self, x):
        h = x.unsqueeze(1)
        for layer in self.layers:
            h = layer(h)
        return h


def _fit_groups(groups, cin, cout):
    groups = max(1, groups)
    while cin % groups or cout % groups:
        groups -= 1
    return groups


class MultiScaleDiscriminator(nn.Module):
    """Three identical discriminators on the waveform pooled 1x, 2x and 4x."""

    def __init__(self, width: float = 1.0, segment_length: int = dsp.SAMPLE_RATE):
        super().__init__()
        self.segment_length = segment_length
        self.discriminators = nn.ModuleList([ScaleDiscriminator(width) for _ in range(3)])
        self.pool = nn.AvgPool1d(4, 2, padding=1, count_include_pad=False)

    def scale_inputs(self, x: torch.Tensor):
        if x.dim() == 1:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.segment_length:
            raise InvalidArgument(f"discriminator expects {self.segment_length} samples, got {x.shape[-1]}")
        inputs = [x]
        for _ in range(len(self.discriminators) - 1):
            inputs.append(self.pool(inputs[-1].unsqueeze(1)).squeeze(1))
        return inputs

    def forward(self, x: torch.Tensor):
        return [d(s) for d, s in zip(self.discriminators, self.scale_inputs(x))]


# ---------------------------------------------------------------- mel


class MelCoder(nn.Module):
    """Linear + dropout, ``B`` conformer blocks, linear. Used as encoder and decoder."""

    def __init__(self, in_dim: int, out_dim: int, cfg: ConformerConfig, dual_bn: bool):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.input = nn.Sequential(nn.Linear(in_dim, cfg.attention_dim), nn.Dropout(cfg.dropout))
        self.blocks = nn.ModuleList([ConformerBlock(cfg, dual_bn) for _ in range(cfg.blocks)])
        self.output = nn.Linear(cfg.attention_dim, out_dim)

    def forward(self, x):
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.in_dim:
            raise InvalidArgument(f"expected {self.in_dim}-D input, got {x.shape[-1]}")
        h = self.input(x)
        for block in self.blocks:
            h = block(h)
        h = self.output(h)
        return h.squeeze(0) if squeeze else h


class V2AMelTemporal(nn.Module):
    """BiLSTM, 25->80 Hz nearest-neighbour upsampling, BiLSTM."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.first = BiLSTM(in_dim, out_dim // 2, layers=1)
        self.second = BiLSTM(2 * (out_dim // 2), out_dim // 2, layers=1)

    def forward(self, z):
        h = self.first(z)
        h = nn_time_upsample(h, VIDEO_FPS, dsp.MEL_FRAME_RATE)
        return self.second(h)


class A2AMelTemporal(nn.Module):
    """BiLSTM, 80->25->80 Hz time bottleneck, BiLSTM up to the decoder width."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.first = BiLSTM(in_dim, max(1, in_dim // 2), layers=2)
        self.second = BiLSTM(self.first.output_dim, out_dim // 2, layers=2)

    def bottleneck(self, z):
        if z.shape[-2] * VIDEO_FPS < dsp.MEL_FRAME_RATE:
            raise InvalidArgument(f"need at least 4 mel frames, got {z.shape[-2]}")
        return time_downsample(self.first(z), dsp.MEL_FRAME_RATE, VIDEO_FPS)

    def forward(self, z):
        length = z.shape[-2]
        low = self.bottleneck(z)
        idx = torch.clamp(torch.arange(length) * VIDEO_FPS // dsp.MEL_FRAME_RATE, max=low.shape[-2] - 1)
        return self.second(low.index_select(-2, idx.to(z.device)))


# ---------------------------------------------------------------- graph


@dataclass(frozen=True)
class ModelConfig:
    family: str = "v2a-mel-vs"
    identity: str = "none"
    width: float = 1.0
    seed: int = 0
    with_audio_branch: bool = False  # V2A graph also holds E_A/T_A (alternating fine-tuning)
    frame_channels: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown model family {self.family!r}; known: {FAMILIES}")
        if self.identity not in IDENTITY_DIMS:
            raise InvalidArgument(f"unknown identity kind {self.identity!r}")
        if not self.width > 0:
            raise InvalidArgument("width multiplier must be positive")

    @property
    def task(self):
        return self.family.split("-")[0]

    @property
    def domain(self):
        return self.family.split("-")[1]

    @property
    def mel_size(self):
        return self.family.split("-")[2] if self.domain == "mel" else None

    def counterpart(self, task: str, **changes) -> "ModelConfig":
        """Same family in the other task (``v2a`` / ``a2a``)."""
        return replace(self, family="-".join([task] + self.family.split("-")[1:]), **changes)


def _init_weights(module: nn.Module):
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Conv3d, nn.ConvTranspose1d)):
            nn.init.kaiming_uniform_(m.weight, a=LRELU_SLOPE, nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, WeightNormConv1d):
            nn.init.kaiming_uniform_(m.direction, a=LRELU_SLOPE, nonlinearity="leaky_relu")
            with torch.no_grad():
                m.magnitude.copy_(m._norm(m.direction))
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class ModelGraph(nn.Module):
    """Every module of one model family, addressable by role."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        w = cfg.width
        wave = cfg.domain == "wave"
        latent = scaled(512, w) if wave else scaled(768, w)
        conformer = ConformerConfig().scaled(w)

        if cfg.task == "v2a":
            self.video_encoder = VideoFramesEncoder(w, cfg.frame_channels)
            self.identity = IdentityConcat(cfg.identity, self.video_encoder.output_dim, w)
            if wave:
                self.v2a_temporal = WaveTemporal(self.identity.output_dim, latent)
            else:
                self.v2a_temporal = V2AMelTemporal(self.identity.output_dim, latent)
        if cfg.task == "a2a" or cfg.with_audio_branch:
            if wave:
                self.audio_encoder = WaveAudioEncoder(latent, w)
                self.a2a_temporal = A2AWaveTemporal(latent)
            else:
                code = MEL_CODE_DIM  # bottleneck width is fixed, not scaled
                self.audio_encoder = MelCoder(dsp.N_MELS, code, replace(conformer, blocks=2), dual_bn=False)
                self.a2a_temporal = A2AMelTemporal(code, latent)
        if wave:
            self.decoder = WaveDecoder(latent, w)
            self.discriminator = MultiScaleDiscriminator(w)
        else:
            blocks = MEL_DECODER_BLOCKS[cfg.mel_size]
            self.decoder = MelCoder(latent, dsp.N_MELS, replace(conformer, blocks=blocks), dual_bn=True)
        self.latent_dim = latent

    @property
    def is_wave(self):
        return self.config.domain == "wave"

    def roles(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in ROLES if hasattr(self, name)}

    def role_of(self, param_name: str) -> str:
        return param_name.split(".", 1)[0]

    def has_audio_branch(self):
        return hasattr(self, "audio_encoder") and hasattr(self, "a2a_temporal")

    def generator_roles(self, path: str):
        if path == "video":
            return [r for r in ("video_encoder", "identity", "v2a_temporal", "decoder") if hasattr(self, r)]
        return ["audio_encoder", "a2a_temporal", "decoder"]

    def video_features(self, frames, identity=None):
        if not hasattr(self, "video_encoder"):
            raise InvalidArgument("graph has no video branch")
        return self.v2a_temporal(self.identity(self.video_encoder(frames), identity))

    def audio_features(self, source):
        if not self.has_audio_branch():
            raise InvalidArgument("graph has no audio branch")
        return self.a2a_temporal(self.audio_encoder(source))

    def generate_from_video(self, frames, identity=None):
        z = self.video_features(frames, identity)
        with modality(self.decoder, "video"):
            return self.decoder(z)

    def generate_from_audio(self, source):
        """A2A pass; ``source`` is a waveform batch (wave) or a log-mel batch (mel)."""
        z = self.audio_features(source)
        with modality(self.decoder, "audio"):
            return self.decoder(z)


def build_model(cfg: ModelConfig | dict) -> ModelGraph:
    if isinstance(cfg, dict):
        cfg = ModelConfig(**cfg)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        graph = ModelGraph(cfg)
        _init_weights(graph)
    return graph
