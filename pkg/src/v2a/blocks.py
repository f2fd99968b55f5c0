"""Differentiable building blocks shared by the generators and discriminator."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from fractions import Fraction

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgument

LRELU_SLOPE = 0.2
PRELU_INIT = 0.25
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
MODALITIES = ("audio", "video")


def scaled(channels: int, width: float) -> int:
    """Channel count under a width multiplier, never below 1."""
    return max(1, int(round(channels * width)))


def _check_tag(tag: str) -> str:
    if tag not in MODALITIES:
        raise InvalidArgument(f"unknown modality tag {tag!r}; expected one of {MODALITIES}")
    return tag


class DualBatchNorm(nn.Module):
    """Batch norm with shared affine parameters and per-modality running statistics.

    Normalizes over every axis except dim 1. Training-mode calls update only the
    running statistics of the active modality; eval-mode calls normalize with
    them. The active modality is ``self.modality`` unless ``tag`` is given.
    """

    def __init__(self, num_features: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        for tag in MODALITIES:
            self.register_buffer(f"running_mean_{tag}", torch.zeros(num_features))
            self.register_buffer(f"running_var_{tag}", torch.ones(num_features))
            self.register_buffer(f"num_batches_{tag}", torch.zeros((), dtype=torch.long))
        self.modality = "audio"

    def reset_stats(self, tag: str):
        _check_tag(tag)
        getattr(self, f"running_mean_{tag}").zero_()
        getattr(self, f"running_var_{tag}").fill_(1.0)
        getattr(self, f"num_batches_{tag}").zero_()

    def copy_stats(self, src: str, dst: str):
        for kind in ("running_mean", "running_var", "num_batches"):
            getattr(self, f"{kind}_{dst}").copy_(getattr(self, f"{kind}_{_check_tag(src)}"))

    def forward(self, x: torch.Tensor, tag: str | None = None) -> torch.Tensor:
        tag = _check_tag(tag or self.modality)
        mean = getattr(self, f"running_mean_{tag}")
        var = getattr(self, f"running_var_{tag}")
        if self.training:
            getattr(self, f"num_batches_{tag}").add_(1)
        return F.batch_norm(x, mean, var, self.weight, self.bias,
                            training=self.training, momentum=self.momentum, eps=self.eps)

    def extra_repr(self):
        return f"{self.num_features}, momentum={self.momentum}, eps={self.eps}"


def set_modality(module: nn.Module, tag: str):
    _check_tag(tag)
    for m in module.modules():
        if isinstance(m, DualBatchNorm):
            m.modality = tag


@contextlib.contextmanager
def modality(module: nn.Module, tag: str):
    """Temporarily route every DualBatchNorm under ``module`` to ``tag``."""
    previous = [(m, m.modality) for m in module.modules() if isinstance(m, DualBatchNorm)]
    set_modality(module, tag)
    try:
        yield module
    finally:
        for m, old in previous:
            m.modality = old


def batch_norm_1d(channels: int, dual: bool) -> nn.Module:
    if dual:
        return DualBatchNorm(channels)
    return nn.BatchNorm1d(channels, momentum=BN_MOMENTUM, eps=BN_EPS)


# ---------------------------------------------------------------- conv stacks


def reflect_indices(length: int, pad: int) -> torch.Tensor:
    """Source indices of a reflection pad that folds repeatedly when ``pad >= length``."""
    idx = torch.arange(-pad, length + pad)
    if length == 1:
        return torch.zeros_like(idx)
    period = 2 * (length - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx >= length, period - idx, idx)


class ReflectionPad1d(nn.Module):
    """Reflection padding on the last axis, defined for any input length.

    Matches ``nn.ReflectionPad1d`` whenever ``pad < length``; shorter inputs are
    reflected back and forth (a length-1 input is repeated).
    """

    def __init__(self, pad: int):
        super().__init__()
        self.pad = pad

    def forward(self, x):
        if x.shape[-1] > self.pad:
            return F.pad(x, (self.pad, self.pad), mode="reflect")
        return x.index_select(-1, reflect_indices(x.shape[-1], self.pad).to(x.device))

    def extra_repr(self):
        return str(self.pad)


class ResidualStack1d(nn.Module):
    """Dilated residual stack of the waveform encoder/decoder, length preserving."""

    def __init__(self, channels: int, dilation: int = 1, dual_bn: bool = False):
        super().__init__()
        self.main = nn.Sequential(
            nn.LeakyReLU(LRELU_SLOPE),
            ReflectionPad1d(dilation),
            nn.Conv1d(channels, channels, 3, dilation=dilation),
            batch_norm_1d(channels, dual_bn),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Conv1d(channels, channels, 1),
            batch_norm_1d(channels, dual_bn),
        )
        self.skip = nn.Sequential(nn.Conv1d(channels, channels, 1), batch_norm_1d(channels, dual_bn))

    def forward(self, x):
        return self.main(x) + self.skip(x)


class ResidualStack2d(nn.Module):
    """ResNet basic block used by the video frames encoder."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, downsample: bool = False):
        super().__init__()
        if not downsample and (in_channels != out_channels or stride != 1):
            raise InvalidArgument(
                f"{in_channels}->{out_channels} channels at stride {stride} needs downsample=True")
        self.main = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False),
            nn.BatchNorm2d(out_channels, momentum=BN_MOMENTUM, eps=BN_EPS),
            nn.PReLU(out_channels, init=PRELU_INIT),
            nn.Conv2d(out_channels, out_channels, 3, 1, 1, bias=False),
            nn.BatchNorm2d(out_channels, momentum=BN_MOMENTUM, eps=BN_EPS),
        )
        if downsample:
            self.skip = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride, bias=False),
                nn.BatchNorm2d(out_channels, momentum=BN_MOMENTUM, eps=BN_EPS),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        return self.main(x) + self.skip(x)


class WeightNormConv1d(nn.Module):
    """1-D convolution with kernel ``g * v / ||v||`` (norm per output channel)."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, groups=1):
        super().__init__()
        conv = nn.Conv1d(in_channels, out_channels, kernel_size, stride, padding, groups=groups)
        self.stride, self.padding, self.groups = stride, padding, groups
        self.direction = nn.Parameter(conv.weight.detach().clone())
        self.magnitude = nn.Parameter(self._norm(self.direction).detach().clone())
        self.bias = nn.Parameter(conv.bias.detach().clone())

    @staticmethod
    def _norm(v):
        return torch.linalg.vector_norm(v, dim=(1, 2), keepdim=True)

    def kernel(self) -> torch.Tensor:
        norm = self._norm(self.direction)
        if bool((norm == 0).any()):
            raise InvalidArgument("weight-norm direction has zero norm")
        return self.magnitude * self.direction / norm

    def forward(self, x):
        return F.conv1d(x, self.kernel(), self.bias, self.stride, self.padding, groups=self.groups)


# ---------------------------------------------------------------- conformer


@dataclass(frozen=True)
class ConformerConfig:
    blocks: int = 2
    attention_dim: int = 256
    heads: int = 4
    conv_kernel: int = 31
    ff_dim: int = 2048
    dropout: float = 0.1

    def __post_init__(self):
        if self.attention_dim % self.heads:
            raise InvalidArgument("attention_dim must be divisible by heads")
        if self.conv_kernel % 2 == 0:
            raise InvalidArgument("conv_kernel must be odd")

    def scaled(self, width: float) -> "ConformerConfig":
        dim = max(self.heads, scaled(self.attention_dim // self.heads, width) * self.heads)
        return ConformerConfig(self.blocks, dim, self.heads, self.conv_kernel,
                               scaled(self.ff_dim, width), self.dropout)


class FeedForward(nn.Module):
    def __init__(self, dim, hidden, dropout):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(dim), nn.Linear(dim, hidden), nn.SiLU(), nn.Dropout(dropout),
            nn.Linear(hidden, dim), nn.Dropout(dropout),
        )

    def forward(self, x):
        return self.net(x)


def relative_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal embeddings of relative offsets ``length-1, ..., -(length-1)``."""
    offsets = torch.arange(length - 1, -length, -1, dtype=torch.float64)[:, None]
    freqs = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(2 * length - 1, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(offsets * freqs)
    pe[:, 1::2] = torch.cos(offsets * freqs)
    return pe.to(dtype)


class RelPositionSelfAttention(nn.Module):
    """Multi-head self-attention with Transformer-XL relative position terms."""

    def __init__(self, dim, heads, dropout):
        super().__init__()
        self.heads, self.d_k = heads, dim // heads
        self.norm = nn.LayerNorm(dim)
        self.linear_q = nn.Linear(dim, dim)
        self.linear_k = nn.Linear(dim, dim)
        self.linear_v = nn.Linear(dim, dim)
        self.linear_pos = nn.Linear(dim, dim, bias=False)
        self.linear_out = nn.Linear(dim, dim)
        self.pos_bias_u = nn.Parameter(torch.empty(heads, self.d_k))
        self.pos_bias_v = nn.Parameter(torch.empty(heads, self.d_k))
        nn.init.xavier_uniform_(self.pos_bias_u)
        nn.init.xavier_uniform_(self.pos_bias_v)
        self.attn_dropout = nn.Dropout(dropout)
        self.out_dropout = nn.Dropout(dropout)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.d_k).transpose(1, 2)

    def forward(self, x):
        b, t, dim = x.shape
        h = self.norm(x)
        q = self._split(self.linear_q(h)).transpose(1, 2)  # [B, T, H, d_k]
        k, v = self._split(self.linear_k(h)), self._split(self.linear_v(h))
        pos = relative_positions(t, dim, x.dtype).to(x.device)
        p = self.linear_pos(pos).view(2 * t - 1, self.heads, self.d_k).permute(1, 2, 0)  # [H, d_k, 2T-1]

        content = torch.matmul((q + self.pos_bias_u).transpose(1, 2), k.transpose(-2, -1))
        position = torch.matmul((q + self.pos_bias_v).transpose(1, 2), p)  # [B, H, T, 2T-1]
        # entry (i, j) needs offset i - j, stored at column (t - 1) - (i - j)
        ar = torch.arange(t, device=x.device)
        index = (t - 1) - (ar[:, None] - ar[None, :])
        position = position.gather(-1, index.expand(b, self.heads, t, t))

        scores = (content + position) / math.sqrt(self.d_k)
        attn = self.attn_dropout(torch.softmax(scores, dim=-1))
        out = torch.matmul(attn, v).transpose(1, 2).reshape(b, t, dim)
        return self.out_dropout(self.linear_out(out))


class ConvModule(nn.Module):
    def __init__(self, dim, kernel, dropout, dual_bn):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(dim, dim, kernel, padding=(kernel - 1) // 2, groups=dim)
        self.bn = batch_norm_1d(dim, dual_bn)
        self.pointwise_out = nn.Conv1d(dim, dim, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        h = self.norm(x).transpose(1, 2)
        h = F.glu(self.pointwise_in(h), dim=1)
        h = F.silu(self.bn(self.depthwise(h)))
        return self.dropout(self.pointwise_out(h)).transpose(1, 2)


class ConformerBlock(nn.Module):
    """Macaron conformer block on ``[B, T, D]`` (or ``[T, D]``) input."""

    def __init__(self, cfg: ConformerConfig, dual_bn: bool = False):
        super().__init__()
        self.dim = cfg.attention_dim
        self.ff1 = FeedForward(cfg.attention_dim, cfg.ff_dim, cfg.dropout)
        self.attn = RelPositionSelfAttention(cfg.attention_dim, cfg.heads, cfg.dropout)
        self.conv = ConvModule(cfg.attention_dim, cfg.conv_kernel, cfg.dropout, dual_bn)
        self.ff2 = FeedForward(cfg.attention_dim, cfg.ff_dim, cfg.dropout)
        self.norm = nn.LayerNorm(cfg.attention_dim)

    def forward(self, x):
        if x.shape[-1] != self.dim:
            raise InvalidArgument(f"conformer expects feature dim {self.dim}, got {x.shape[-1]}")
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn(x)
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        x = self.norm(x)
        return x.squeeze(0) if squeeze else x


# ---------------------------------------------------------------- recurrent


class BiLSTM(nn.Module):
    """Bidirectional LSTM over ``[B, T, D]`` returning ``[B, T, 2*hidden]``."""

    def __init__(self, input_dim: int, hidden: int, layers: int = 1):
        super().__init__()
        self.hidden = hidden
        self.lstm = nn.LSTM(input_dim, hidden, num_layers=layers, batch_first=True, bidirectional=True)
        for name, p in self.lstm.named_parameters():
            if name.startswith("weight_hh"):
                for gate in p.data.chunk(4, 0):
                    nn.init.orthogonal_(gate)
            elif name.startswith("weight_ih"):
                nn.init.xavier_uniform_(p)
            else:
                nn.init.zeros_(p)

    @property
    def output_dim(self):
        return 2 * self.hidden

    def forward(self, x):
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        out, _ = self.lstm(x)
        return out.squeeze(0) if squeeze else out


# ---------------------------------------------------------------- temporal resampling


def _rate(value) -> Fraction:
    rate = Fraction(value).limit_denominator(10**6)
    if rate <= 0:
        raise InvalidArgument(f"rates must be positive, got {value}")
    return rate


def upsample_indices(length: int, src_rate, dst_rate) -> torch.Tensor:
    src, dst = _rate(src_rate), _rate(dst_rate)
    if dst <= src:
        raise InvalidArgument(f"upsampling needs dst_rate > src_rate, got {src_rate} -> {dst_rate}")
    out_len = math.floor(length * dst / src + Fraction(1, 2))
    return torch.tensor([math.floor(j * src / dst) for j in range(out_len)], dtype=torch.long)


def downsample_indices(length: int, src_rate, dst_rate) -> torch.Tensor:
    src, dst = _rate(src_rate), _rate(dst_rate)
    if src <= dst:
        raise InvalidArgument(f"downsampling needs src_rate > dst_rate, got {src_rate} -> {dst_rate}")
    out_len = math.floor(length * dst / src)
    return torch.tensor([math.floor(i * src / dst) for i in range(out_len)], dtype=torch.long)


def nn_time_upsample(x: torch.Tensor, src_rate, dst_rate) -> torch.Tensor:
    """Nearest-neighbour upsampling along the time axis (dim -2)."""
    return x.index_select(-2, upsample_indices(x.shape[-2], src_rate, dst_rate).to(x.device))


def time_downsample(x: torch.Tensor, src_rate, dst_rate) -> torch.Tensor:
    """Keep rows ``floor(i * src/dst)`` along the time axis (dim -2)."""
    return x.index_select(-2, downsample_indices(x.shape[-2], src_rate, dst_rate).to(x.device))
